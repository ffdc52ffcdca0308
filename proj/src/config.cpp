#include "agvas/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace agvas {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument(key + ": expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string num(double d) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define AGVAS_INT(member) \
  Field { [](const RunConfig& c) { return std::to_string(c.member); }, \
          [](RunConfig& c, const std::string& k, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_int(k, v)); } }
#define AGVAS_U64(member) \
  Field { [](const RunConfig& c) { return std::to_string(c.member); }, \
          [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_u64(k, v); } }
#define AGVAS_DBL(member) \
  Field { [](const RunConfig& c) { return num(c.member); }, \
          [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); } }
#define AGVAS_BOOL(member) \
  Field { [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }, \
          [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); } }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"data.seen", Field{[](const RunConfig& c) { return join(c.data.seen); },
                          [](RunConfig& c, const std::string&, const std::string& v) { c.data.seen = to_list(v); }}},
      {"data.unseen", Field{[](const RunConfig& c) { return join(c.data.unseen); },
                            [](RunConfig& c, const std::string&, const std::string& v) { c.data.unseen = to_list(v); }}},
      {"data.per_seen", AGVAS_INT(data.per_seen)},
      {"data.per_unseen", AGVAS_INT(data.per_unseen)},
      {"data.anomalous_fraction", AGVAS_DBL(data.anomalous_fraction)},
      {"data.seed", AGVAS_U64(data.seed)},
      {"mixer.general_seg", AGVAS_DBL(mixer.weights[0])},
      {"mixer.instruct", AGVAS_DBL(mixer.weights[1])},
      {"mixer.direct_seg", AGVAS_DBL(mixer.weights[2])},
      {"mixer.vqa", AGVAS_DBL(mixer.weights[3])},
      {"mixer.seed", AGVAS_U64(mixer.seed)},
      {"mixer.rejection", Field{[](const RunConfig& c) { return std::string(to_string(c.rejection)); },
                                [](RunConfig& c, const std::string&, const std::string& v) {
                                  c.rejection = parse_rejection_mode(v);
                                }}},
      {"model.variant", Field{[](const RunConfig& c) { return std::string(to_string(c.model.variant)); },
                              [](RunConfig& c, const std::string&, const std::string& v) {
                                c.model.variant = parse_variant(v);
                              }}},
      {"model.lm_dim", AGVAS_INT(model.lm.dim)},
      {"model.lm_layers", AGVAS_INT(model.lm.layers)},
      {"model.lm_heads", AGVAS_INT(model.lm.heads)},
      {"model.lm_ffn", AGVAS_INT(model.lm.ffn_hidden)},
      {"model.context", AGVAS_INT(model.lm.context)},
      {"model.decoder_blocks", AGVAS_INT(model.decoder.blocks)},
      {"model.decoder_heads", AGVAS_INT(model.decoder.heads)},
      {"model.decoder_mlp", AGVAS_INT(model.decoder.mlp_hidden)},
      {"model.decoder_neck", AGVAS_INT(model.decoder.neck_hidden)},
      {"model.refiner_hidden", AGVAS_INT(model.refiner_hidden)},
      {"model.spam_heads", AGVAS_INT(model.spam_heads)},
      {"model.adapters", AGVAS_BOOL(model.adapters)},
      {"model.adapter_rank", AGVAS_INT(model.adapter_rank)},
      {"model.adapter_alpha", AGVAS_DBL(model.adapter_alpha)},
      {"model.alpha", AGVAS_DBL(model.decoder.alpha)},
      {"model.threshold", AGVAS_DBL(model.decoder.threshold)},
      {"model.encoder_seed", AGVAS_U64(model.encoder.seed)},
      {"loss.lambda_bce", AGVAS_DBL(loss.lambda_bce)},
      {"loss.lambda_dice", AGVAS_DBL(loss.lambda_dice)},
      {"loss.dice_eps", AGVAS_DBL(loss.dice_eps)},
      {"loss.bce_clamp", AGVAS_DBL(loss.bce_clamp)},
      {"optim.beta1", AGVAS_DBL(optimizer.beta1)},
      {"optim.beta2", AGVAS_DBL(optimizer.beta2)},
      {"optim.eps", AGVAS_DBL(optimizer.eps)},
      {"optim.weight_decay", AGVAS_DBL(optimizer.weight_decay)},
      {"train.lr", AGVAS_DBL(train.schedule.lr)},
      {"train.warmup_iters", AGVAS_INT(train.schedule.warmup_iters)},
      {"train.total_iters", AGVAS_INT(train.schedule.total_iters)},
      {"train.batch_size", AGVAS_INT(train.batch_size)},
      {"train.log_every", AGVAS_INT(train.log_every)},
      {"train.hash_check_every", AGVAS_INT(train.hash_check_every)},
      {"train.seed", AGVAS_U64(train.seed)},
      {"eval.split", Field{[](const RunConfig& c) { return c.eval_split; },
                           [](RunConfig& c, const std::string&, const std::string& v) { c.eval_split = v; }}},
      {"eval.max_new_tokens", AGVAS_INT(max_new_tokens)},
  };
  return f;
}

#undef AGVAS_INT
#undef AGVAS_U64
#undef AGVAS_DBL
#undef AGVAS_BOOL

}  // namespace

void RunConfig::validate() const {
  data.validate();
  mixer.validate();
  loss.validate();
  train.schedule.validate();
  if (train.batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (eval_split != "seen" && eval_split != "unseen" && eval_split != "all") {
    throw std::invalid_argument("eval.split must be seen, unseen or all");
  }
  if (model.lm.dim % model.lm.heads != 0 || model.decoder.dim % model.decoder.heads != 0) {
    throw std::invalid_argument("attention widths must be divisible by head counts");
  }
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [k, f] : fields()) {
    if (k == key) {
      f.set(cfg, key, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key: " + key);
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str());
  cfg.validate();
  return cfg;
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace agvas
