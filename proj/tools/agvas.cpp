// Command-line front end: gen-data, gen-instruct, train, eval, segment, ablate.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agvas/config.hpp"
#include "agvas/dataset.hpp"
#include "agvas/instruct.hpp"
#include "agvas/pipeline.hpp"

namespace fs = std::filesystem;
using namespace agvas;

namespace {

RunConfig make_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) cfg = load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor-guided anomaly segmentation on synthetic defect imagery"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value configuration file");
    sub->add_option("--set", overrides, "override a configuration key (key=value)");
  };

  std::string data_dir = "data";
  auto* gen_data = app.add_subcommand("gen-data", "render the synthetic dataset and its manifest");
  add_config(gen_data);
  gen_data->add_option("--out", data_dir, "dataset directory");

  std::string corpus_path = "corpus.jsonl";
  std::size_t corpus_count = 1000;
  auto* gen_instruct = app.add_subcommand("gen-instruct", "compose a fixed-seed instruction corpus");
  add_config(gen_instruct);
  gen_instruct->add_option("--data", data_dir, "dataset directory")->required();
  gen_instruct->add_option("--out", corpus_path, "output JSON-lines file");
  gen_instruct->add_option("--count", corpus_count, "number of samples");

  std::string runs_dir = "runs";
  auto* train = app.add_subcommand("train", "train on the seen categories");
  add_config(train);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--runs", runs_dir, "parent directory of run directories");

  std::string run_dir, out_dir, split;
  auto* eval = app.add_subcommand("eval", "evaluate a run with the default instruction");
  eval->add_option("--run", run_dir, "run directory")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "output directory (default <run>/eval)");
  eval->add_option("--split", split, "seen, unseen or all (default from config)");

  std::string image_path, instruction(kDefaultInstruction), out_prefix = "segment";
  auto* segment = app.add_subcommand("segment", "segment one image under an instruction");
  segment->add_option("--run", run_dir, "run directory")->required();
  segment->add_option("--image", image_path, "PGM image")->required();
  segment->add_option("--instruction", instruction, "instruction text");
  segment->add_option("--out", out_prefix, "output path prefix");

  std::vector<std::string> variant_names = {"full", "no-seg-anchor", "no-relative-anchors", "no-spam"};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  auto* ablate = app.add_subcommand("ablate", "train and evaluate model variants side by side");
  add_config(ablate);
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();
  ablate->add_option("--variants", variant_names, "variants to run");
  ablate->add_option("--seeds", seeds, "training seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_data) {
      const RunConfig cfg = make_config(config_path, overrides);
      const auto records = write_dataset(generate_dataset(cfg.data), data_dir);
      TemplateLibrary::defaults().save(fs::path(data_dir) / "templates");
      std::cout << "wrote " << records.size() << " samples to " << data_dir << "\n";
    } else if (*gen_instruct) {
      const RunConfig cfg = make_config(config_path, overrides);
      const auto records = read_manifest(fs::path(data_dir) / "manifest.tsv");
      SampleStream stream(source_records(records, Split::Seen), cfg.mixer, templates_for(data_dir), cfg.rejection);
      std::vector<InstructionSample> samples;
      for (std::size_t i = 0; i < corpus_count; ++i) samples.push_back(stream.next());
      export_corpus(samples, corpus_path);
      std::cout << "wrote " << samples.size() << " samples to " << corpus_path << "\n";
    } else if (*train) {
      const RunConfig cfg = make_config(config_path, overrides);
      const fs::path dir = run_dir_for(cfg, runs_dir);
      const auto result = run_training(cfg, data_dir, dir, &std::cout);
      std::cout << "run directory: " << dir.string() << "\n";
      std::cout << "training time: " << result.seconds << " s\n";
    } else if (*eval) {
      const LoadedRun run = load_run(run_dir);
      const fs::path out = out_dir.empty() ? fs::path(run_dir) / "eval" : fs::path(out_dir);
      const auto result = run_eval(run, data_dir, out, split.empty() ? run.config.eval_split : split);
      std::cout << format_table(result.report);
      std::cout << "tuple (AP, F1-Max, IoU_ano): " << format_tuple(percent_tuple(result.report.mean)) << "\n";
      std::cout << "responses without anchors: " << result.missing_triple << " of " << result.samples << "\n";
    } else if (*segment) {
      const LoadedRun run = load_run(run_dir);
      const auto result = run_segment(run, image_path, instruction, out_prefix);
      std::cout << "USER: " << instruction << "\nASSISTANT: " << result.response << "\n";
      if (result.anchors_missing) std::cout << "(anchors missing: empty mask)\n";
    } else if (*ablate) {
      const RunConfig cfg = make_config(config_path, overrides);
      std::vector<Variant> variants;
      for (const auto& v : variant_names) variants.push_back(parse_variant(v));
      const auto rows = run_ablation(cfg, data_dir, out_dir, variants, seeds, &std::cout);
      std::cout << format_ablation(rows);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
