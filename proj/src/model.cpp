#include "agvas/model.hpp"

#include "agvas/image.hpp"

namespace agvas {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoSegAnchor: return "no-seg-anchor";
    case Variant::NoRelativeAnchors: return "no-relative-anchors";
    case Variant::NoSpam: return "no-spam";
  }
  return "full";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : kVariants) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant: " + std::string(s));
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::Full: return "full model";
    case Variant::NoSegAnchor: return "w/o [SEG]";
    case Variant::NoRelativeAnchors: return "w/o [NOR][ANO]";
    case Variant::NoSpam: return "w/o SPAM";
  }
  return "";
}

AnchorSet variant_anchors(Variant v) {
  switch (v) {
    case Variant::NoSegAnchor: return AnchorSet::only(Anchor::Nor).with(Anchor::Ano);
    case Variant::NoRelativeAnchors: return AnchorSet::only(Anchor::Seg);
    default: return AnchorSet::all();
  }
}

std::vector<int> encode_prompt(std::string_view instruction, const Vocabulary& vocab) {
  std::vector<int> ids = {vocab.bos_id()};
  const auto instr = vocab.encode(instruction);
  ids.insert(ids.end(), instr.begin(), instr.end());
  ids.push_back(vocab.sep_id());
  return ids;
}

EncodedSample encode_sample(const InstructionSample& s, const Vocabulary& vocab, const Mask* grid_mask) {
  EncodedSample e;
  e.text_ids = encode_prompt(s.instruction, vocab);
  e.response_begin = static_cast<Index>(e.text_ids.size());
  const auto resp = vocab.encode(s.response);
  e.text_ids.insert(e.text_ids.end(), resp.begin(), resp.end());
  e.response_end = static_cast<Index>(e.text_ids.size());
  e.text_ids.push_back(vocab.eos_id());
  e.supervise = s.supervise;
  if (grid_mask != nullptr && s.has_mask()) e.gt = SupervisionTriple::from_grid_mask(*grid_mask);
  return e;
}

namespace {

Rng seeded(std::uint64_t seed, std::uint64_t salt) { return Rng(seed * 0x9e3779b97f4a7c15ULL + salt); }

}  // namespace

AgVasModel::AgVasModel(const ModelConfig& cfg, const Vocabulary& vocab)
    : cfg_(cfg), vocab_(vocab), encoders_(cfg.encoder) {
  if (!vocab.has_anchors()) throw std::invalid_argument("AgVasModel: vocabulary lacks anchor tokens");
  if (cfg.decoder.dim != cfg.encoder.pixel_dim) {
    throw std::invalid_argument("AgVasModel: decoder width must equal the native pixel feature width");
  }
  if (cfg.decoder.grid != cfg.encoder.pixel_grid || cfg.decoder.image_size != cfg.encoder.image_size) {
    throw std::invalid_argument("AgVasModel: decoder grid/image size must match the pixel encoder");
  }
  // Separate streams per module so that changing one module's size leaves the
  // initialisation of the others untouched.
  Rng r1 = seeded(cfg.seed, 1), r2 = seeded(cfg.seed, 2), r3 = seeded(cfg.seed, 3), r4 = seeded(cfg.seed, 4),
      r5 = seeded(cfg.seed, 5), r6 = seeded(cfg.seed, 6), r7 = seeded(cfg.seed, 7);
  proj_semantic_ = FeatureProjection("proj.semantic", cfg.encoder.semantic_dim, cfg.lm.dim, r1);
  proj_pixel_ = FeatureProjection("proj.pixel", cfg.encoder.pixel_dim, cfg.lm.dim, r2);
  spam_ = SemanticPixelAlignment(cfg.lm.dim, cfg.spam_heads, r3);
  lm_ = MicroLM(cfg.lm, vocab.size(), r4);
  refiner_ = TokenRefiner(cfg.lm.dim, cfg.refiner_hidden, cfg.decoder.dim, r5);
  decoder_ = AnchorGuidedDecoder(cfg.decoder, r6);
  if (cfg.adapters) lm_.enable_adapters(cfg.adapter_rank, r7, cfg.adapter_alpha);
}

ImageFeatures AgVasModel::encode(const Image& img) const {
  return ImageFeatures{encoders_.encode_semantic(img), encoders_.encode_pixel(img)};
}

Var AgVasModel::image_prefix(Tape& tape, const ImageFeatures& f) const {
  Var fs = proj_semantic_.forward(tape, f.semantic);
  if (cfg_.variant == Variant::NoSpam) return assemble_prefix(fs, Var{});
  Var fp = proj_pixel_.forward(tape, f.pixel);
  return assemble_prefix(fs, spam_.align(tape, fs, fp).aligned);
}

AgVasModel::Forward AgVasModel::forward(Tape& tape, const ImageFeatures& f, std::span<const int> text_ids,
                                        Index response_begin, bool decode) const {
  Forward out;
  out.prefix = image_prefix(tape, f);
  out.lm = lm_.forward(tape, out.prefix, text_ids);
  if (!decode) return out;
  const auto response = text_ids.subspan(static_cast<std::size_t>(response_begin));
  out.anchors = extract_anchor_hidden(out.lm.hidden, out.lm.prefix_len + response_begin, response, vocab_, anchors());
  out.refined = refiner_.forward(tape, out.anchors->rows);
  Var z0 = decoder_.build_input(tape, out.refined, anchors());
  Var pixels = tape.constant(f.pixel.data);
  out.decoded = decoder_.decode(tape, z0, pixels);
  out.heads = decoder_.heads(out.decoded.tokens, out.decoded.pixels, anchors());
  return out;
}

AgVasModel::LossParts AgVasModel::loss(Tape& tape, const ImageFeatures& f, const EncodedSample& s,
                                       const LossConfig& cfg) const {
  const AnchorSet seg_targets = s.gt ? s.supervise.intersect(anchors()) : AnchorSet::none();
  const bool decode = !seg_targets.empty();
  Forward fw = forward(tape, f, s.text_ids, s.response_begin, decode);
  std::vector<int> rows, targets;
  for (Index r = s.response_begin; r <= s.response_end; ++r) {
    rows.push_back(static_cast<int>(r));
    targets.push_back(s.text_ids[static_cast<std::size_t>(r)]);
  }
  LossParts out;
  Var text = text_loss(fw.lm.logits, rows, targets);
  out.text = text.value()(0, 0);
  if (!decode) {
    total_loss(out.text, 0.0);
    out.total = text;
    return out;
  }
  AnchorGuidedDecoder::Heads supervised;
  if (seg_targets.contains(Anchor::Seg)) supervised.seg = fw.heads.seg;
  if (seg_targets.contains(Anchor::Nor)) supervised.nor = fw.heads.nor;
  if (seg_targets.contains(Anchor::Ano)) supervised.ano = fw.heads.ano;
  const SegLossTerms seg = seg_loss(supervised, *s.gt, cfg);
  out.seg = seg.total.value()(0, 0);
  out.has_seg = true;
  out.total = total_loss(text, seg.total);
  return out;
}

AgVasModel::Inference AgVasModel::infer(const ImageFeatures& f, std::string_view instruction, int max_new) const {
  Inference out;
  std::vector<int> ids = encode_prompt(instruction, vocab_);
  const Index response_begin = static_cast<Index>(ids.size());
  Matrix prefix;
  {
    Tape t(false);
    prefix = image_prefix(t, f).value();
  }
  out.response_ids = lm_.generate(prefix, ids, max_new, vocab_.eos_id());
  out.response = vocab_.decode(out.response_ids);
  ids.insert(ids.end(), out.response_ids.begin(), out.response_ids.end());
  Tape tape(false);
  try {
    Forward fw = forward(tape, f, ids, response_begin, true);
    out.maps = to_prob_maps(fw.heads, cfg_.decoder);
  } catch (const AnchorsMissing&) {
    out.anchors_missing = true;
    const Index g = cfg_.decoder.grid;
    out.maps = fuse_and_binarize(Matrix::Zero(g, g), Matrix(), cfg_.decoder);
  }
  return out;
}

std::vector<Parameter*> AgVasModel::parameters() {
  std::vector<Parameter*> out;
  visit([&](Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<const Parameter*> AgVasModel::parameters() const {
  std::vector<const Parameter*> out;
  const_cast<AgVasModel*>(this)->visit([&](Parameter& p) { out.push_back(&p); });
  return out;
}

}  // namespace agvas
