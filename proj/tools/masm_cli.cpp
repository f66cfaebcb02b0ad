// masm: command-line front end for data generation, training, evaluation,
// ablations and diagnostics.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "masm/checkpoint.hpp"
#include "masm/config.hpp"
#include "masm/csv.hpp"
#include "masm/data_synth.hpp"
#include "masm/error.hpp"
#include "masm/experiment.hpp"
#include "masm/network.hpp"

namespace fs = std::filesystem;
using namespace masm;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string checkpoint;
  double h = 1e-5;
  double tol = 1e-5;
};

TrainConfig resolve_config(const Options& o) {
  TrainConfig cfg = o.config_path.empty() ? default_config() : load_config(o.config_path);
  if (o.seed) cfg = with_seed(cfg, *o.seed);
  validate(cfg);
  return cfg;
}

std::string out_path(const Options& o, const std::string& file) {
  fs::create_directories(o.out_dir);
  return (fs::path(o.out_dir) / file).string();
}

void emit(const Options& o, const std::string& file, const CsvTable& table,
          const std::string& echo) {
  const std::string path = out_path(o, file);
  save_csv(path, table, echo);
  std::cout << path << "\n";
}

Model pretrained_model(const Options& o, const TrainConfig& cfg, const Splits& splits) {
  if (!o.checkpoint.empty()) return load_checkpoint(o.checkpoint).model;
  return run_pretrain(cfg, splits).model;
}

CsvTable metrics_table(const std::string& name, const SplitMetrics& in_domain,
                       const SplitMetrics& heldout) {
  CsvTable t{name, {"split", "level", "auc", "ap", "eer"}, {}};
  auto add = [&](const char* split, const char* level, const MetricTriple& m) {
    t.rows.push_back({split, level, format_metric(m.auc), format_metric(m.ap),
                      format_metric(m.eer)});
  };
  add("in_domain", "frame", in_domain.frame);
  add("in_domain", "video", in_domain.video);
  add("heldout", "frame", heldout.frame);
  add("heldout", "video", heldout.video);
  return t;
}

void cmd_gen_data(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  const Splits splits = build_splits(cfg.data);
  const std::pair<const char*, const std::vector<SyntheticSample>*> parts[] = {
      {"pretrain.csv", &splits.pretrain},
      {"finetune_train.csv", &splits.finetune_train},
      {"test_indomain.csv", &splits.test_indomain},
      {"test_heldout.csv", &splits.test_heldout},
  };
  for (const auto& [file, samples] : parts) {
    const std::string path = out_path(o, file);
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
    write_samples_csv(out, *samples);
    std::cout << path << "\n";
  }
}

void cmd_pretrain(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  const Splits splits = build_splits(cfg.data);
  PretrainResult r = run_pretrain(cfg, splits);
  const std::string path = o.checkpoint.empty() ? out_path(o, "pretrained.ckpt") : o.checkpoint;
  save_checkpoint(path, {r.model, config_to_json(cfg), r.steps, r.rng});
  std::cout << path << " base_accuracy=" << format_metric(r.base_accuracy)
            << " epochs=" << r.epochs_run << "\n";
}

void cmd_finetune(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  const Splits splits = build_splits(cfg.data);
  const Model pretrained = pretrained_model(o, cfg, splits);
  RunRecord rec = run_finetune(cfg, pretrained, splits);
  const std::string echo = config_to_json(cfg);
  save_checkpoint(out_path(o, "finetuned.ckpt"),
                  {rec.model, echo, rec.iterations.size(), Rng(cfg.seed)});
  emit(o, "iterations.csv", iteration_log_table(rec), echo);
  emit(o, "metrics.csv", metrics_table("metrics", rec.in_domain, rec.heldout), echo);
  std::cout << "in_domain_auc=" << format_metric(rec.in_domain.frame.auc)
            << " heldout_auc=" << format_metric(rec.heldout.frame.auc)
            << " seconds=" << format_metric(rec.wall_clock_seconds) << "\n";
}

Checkpoint required_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw Error(ErrorCode::kInvalidArgument, "--checkpoint is required");
  return load_checkpoint(o.checkpoint);
}

void require_binary(const Model& model) {
  if (!model.binary())
    throw Error(ErrorCode::kInvalidArgument, "checkpoint has no binary head; run finetune first");
}

void cmd_eval(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  const Checkpoint ck = required_checkpoint(o);
  require_binary(ck.model);
  const Splits splits = build_splits(cfg.data);
  emit(o, "eval.csv",
       metrics_table("eval", evaluate_split(ck.model, splits.test_indomain),
                     evaluate_split(ck.model, splits.test_heldout)),
       config_to_json(cfg));
}

void cmd_ablate(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  const Splits splits = build_splits(cfg.data);
  const Model pretrained = pretrained_model(o, cfg, splits);
  const std::string echo = config_to_json(cfg);
  for (const CsvTable& t : run_ablation(cfg, pretrained, splits)) emit(o, t.name + ".csv", t, echo);
}

void cmd_robustness(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  const Checkpoint ck = required_checkpoint(o);
  require_binary(ck.model);
  const Splits splits = build_splits(cfg.data);
  emit(o, "robustness.csv", run_robustness(cfg, ck.model, splits), config_to_json(cfg));
}

void cmd_inspect(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  const Checkpoint ck = required_checkpoint(o);
  emit(o, "inspect.csv", inspection_table(decompose_inspect(ck.model, cfg.model.decomposition)),
       config_to_json(cfg));
}

int cmd_gradcheck(const Options& o) {
  TrainConfig cfg = resolve_config(o);
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_blocks = 2;
  mc.n_tokens = 4;
  mc.d_hidden = 16;
  mc.decomposition.num_artifacts = 2;
  Rng rng(cfg.seed);
  Model model = init_model(mc, rng);
  decompose_attention(model, mc.decomposition);
  reset_binary_head(model, rng, 0.5);
  // Move the artifact factors off the decomposition so the spectral term is
  // away from its kink.
  for (Block& b : model.blocks)
    for (Projection& p : b.attn)
      for (ArtifactSubspace& a : p.layer().artifacts) {
        for (std::size_t i = 0; i < a.u.size(); ++i) a.u.data()[i] += 0.05 * rng.normal();
        for (double& s : a.s) s += 0.05 * rng.normal();
        for (std::size_t i = 0; i < a.v.size(); ++i) a.v.data()[i] += 0.05 * rng.normal();
      }
  TrainBatch batch;
  for (int i = 0; i < 4; ++i) {
    Matrix x(mc.n_tokens, mc.d_model);
    for (std::size_t j = 0; j < x.size(); ++j) x.data()[j] = rng.normal();
    batch.inputs.push_back(x);
    batch.labels.push_back(i % 2);
    batch.clip_ids.push_back(i);
  }
  const GradCheckReport r =
      grad_check(model, batch, cfg.weights, TrainScope::kArtifacts, o.h, o.tol);
  nlohmann::json j = {{"passed", r.passed},
                      {"coordinates", r.coordinates},
                      {"max_rel_error", r.max_rel_error},
                      {"max_abs_error", r.max_abs_error},
                      {"worst_group", r.worst_group},
                      {"worst_index", r.worst_index},
                      {"warnings", r.warnings}};
  std::cout << j.dump() << "\n";
  return r.passed ? 0 : 1;
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-artifact subspace fine-tuning with selective layer masking"};
  app.require_subcommand(1);
  Options o;
  int status = 0;

  auto add = [&](const std::string& name, const std::string& help, auto fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--out", o.out_dir, "Output directory");
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
    sub->callback([&o, &status, fn] {
      if constexpr (std::is_same_v<decltype(fn(o)), int>) status = fn(o);
      else fn(o);
    });
    return sub;
  };
  add("gen-data", "Write the synthetic splits as CSV", cmd_gen_data);
  add("pretrain", "Train the base model on the multi-class task", cmd_pretrain);
  add("finetune", "Decompose and fine-tune for detection", cmd_finetune);
  add("eval", "Evaluate a fine-tuned checkpoint", cmd_eval);
  add("ablate", "Run the ablation grids", cmd_ablate);
  add("robustness", "Distortion grid on a fine-tuned checkpoint", cmd_robustness);
  add("inspect", "Per-layer decomposition report", cmd_inspect);
  CLI::App* gc = add("gradcheck", "Finite-difference check on a tiny model", cmd_gradcheck);
  gc->add_option("--step", o.h, "Finite-difference step");
  gc->add_option("--tol", o.tol, "Relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 64;
  } catch (const Error& e) {
    print_error(error_code_name(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 3;
  }
  return status;
}
