#include "agvas/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

namespace agvas {

namespace {

bool is_punct(char ch) {
  switch (ch) {
    case '.':
    case ',':
    case '?':
    case '!':
    case ';':
    case ':':
      return true;
    default:
      return false;
  }
}

bool is_punct_token(std::string_view w) { return w.size() == 1 && is_punct(w[0]); }

bool is_anchor_token(std::string_view w) {
  return std::find(kAnchorTokens.begin(), kAnchorTokens.end(), w) != kAnchorTokens.end();
}

}  // namespace

std::vector<Anchor> AnchorSet::members() const {
  std::vector<Anchor> out;
  for (Anchor a : kAllAnchors) {
    if (contains(a)) out.push_back(a);
  }
  return out;
}

std::string AnchorSet::tokens() const {
  std::string s;
  for (Anchor a : members()) s += anchor_token(a);
  return s;
}

AnchorSet AnchorSet::parse(std::string_view s) {
  AnchorSet out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    bool matched = false;
    for (Anchor a : kAllAnchors) {
      const auto tok = anchor_token(a);
      if (s.substr(pos, tok.size()) == tok) {
        out = out.with(a);
        pos += tok.size();
        matched = true;
        break;
      }
    }
    if (!matched) throw std::invalid_argument("AnchorSet::parse: unexpected text '" + std::string(s) + "'");
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char ch = text[i];
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
      ++i;
      continue;
    }
    bool anchor = false;
    for (auto tok : kAnchorTokens) {
      if (text.substr(i, tok.size()) == tok) {
        flush();
        out.emplace_back(tok);
        i += tok.size();
        anchor = true;
        break;
      }
    }
    if (anchor) continue;
    if (is_punct(ch)) {
      flush();
      out.emplace_back(1, ch);
      ++i;
      continue;
    }
    word.push_back(ch);
    ++i;
  }
  flush();
  return out;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i];
    const bool glue = i == 0 || is_punct_token(w) || (is_anchor_token(w) && is_anchor_token(words[i - 1]));
    if (!glue) out.push_back(' ');
    out += w;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
  for (std::size_t i = 0; i < kSpecials.size(); ++i) {
    if (i >= tokens_.size() || tokens_[i] != kSpecials[i]) throw std::invalid_argument("vocabulary: specials missing");
  }
  const std::size_t n = tokens_.size();
  if (n >= kSpecials.size() + 3 && tokens_[n - 3] == kAnchorTokens[0] && tokens_[n - 2] == kAnchorTokens[1] &&
      tokens_[n - 1] == kAnchorTokens[2]) {
    has_anchors_ = true;
  } else {
    for (auto tok : kAnchorTokens) {
      if (index_.count(std::string(tok))) throw std::invalid_argument("vocabulary: anchors must be the last three ids");
    }
  }
}

Vocabulary Vocabulary::build_base(std::span<const std::string> corpus) {
  std::set<std::string> words;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) {
      if (!is_anchor_token(w)) words.insert(std::move(w));
    }
  }
  std::vector<std::string> tokens(kSpecials.begin(), kSpecials.end());
  for (const auto& w : words) {
    if (std::find(kSpecials.begin(), kSpecials.end(), w) == kSpecials.end()) tokens.push_back(w);
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) { return build_base(corpus).with_anchors(); }

Vocabulary Vocabulary::with_anchors() const {
  if (has_anchors_) return *this;
  std::vector<std::string> tokens = tokens_;
  for (auto tok : kAnchorTokens) tokens.emplace_back(tok);
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_id() : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

int Vocabulary::anchor_id(Anchor a) const {
  if (!has_anchors_) throw std::logic_error("vocabulary has no anchor tokens");
  return size() - 3 + static_cast<int>(a);
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int i : ids) words.push_back(token(i));
  return join_words(words);
}

}  // namespace agvas
