#include "masm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <limits>
#include <numeric>

#include "masm/error.hpp"

namespace masm {

namespace {

constexpr std::uint64_t kPretrainStream = 0x50524554;  // "PRET"
constexpr std::uint64_t kFinetuneStream = 0x46494E45;  // "FINE"
constexpr std::size_t kEvalBatch = 64;

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    Rng& rng) {
  auto order = iota_indices(n);
  shuffle(std::span<std::size_t>(order), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
  }
  return batches;
}

std::vector<SyntheticSample> real_only(const std::vector<SyntheticSample>& samples) {
  std::vector<SyntheticSample> out;
  for (const auto& s : samples)
    if (s.label == 0) out.push_back(s);
  return out;
}

std::vector<std::string> metric_columns() {
  std::vector<std::string> cols;
  for (const char* split : {"in_domain", "heldout", "mean"})
    for (const char* metric : {"auc", "ap", "eer"}) cols.push_back(std::string(split) + "_" + metric);
  return cols;
}

std::vector<std::string> metric_cells(const RunRecord& r) {
  const MetricTriple& a = r.in_domain.frame;
  const MetricTriple& b = r.heldout.frame;
  return {format_metric(a.auc),  format_metric(a.ap),  format_metric(a.eer),
          format_metric(b.auc),  format_metric(b.ap),  format_metric(b.eer),
          format_metric(0.5 * (a.auc + b.auc)), format_metric(0.5 * (a.ap + b.ap)),
          format_metric(0.5 * (a.eer + b.eer))};
}

}  // namespace

double base_accuracy(const Model& model, const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); i += kEvalBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(samples.size(), i + kEvalBatch); ++j) idx.push_back(j);
    const TrainBatch batch = make_batch(samples, idx, true);
    const ForwardResult out = forward(model, batch);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto row = std::span(out.probabilities).subspan(r * out.n_outputs, out.n_outputs);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == batch.labels[r]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

PretrainResult run_pretrain(const TrainConfig& config, const Splits& splits) {
  validate(config);
  PretrainResult result;
  result.rng = Rng(config.seed).fork(kPretrainStream);
  result.model = init_model(config.model, result.rng);
  auto groups = parameter_groups(result.model, TrainScope::kFull);
  std::vector<std::size_t> sizes;
  for (const auto& g : groups) sizes.push_back(g.size());
  OptimizerConfig opt_cfg = config.optimizer;
  opt_cfg.mode = OptimizerMode::kAdaptive;
  opt_cfg.lr = config.pretrain.lr;
  OptimizerState opt(opt_cfg, sizes);
  const LayerMask no_mask;

  const auto eval_set = real_only(splits.test_indomain);
  result.base_accuracy = base_accuracy(result.model, eval_set);
  for (std::size_t epoch = 0; epoch < config.pretrain.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(splits.pretrain.size(), config.pretrain.batch_size, result.rng)) {
      const TrainBatch batch = make_batch(splits.pretrain, idx, true);
      const Gradients g = backward(result.model, batch, config.weights, TrainScope::kFull);
      apply_update(groups, g.groups, no_mask, opt);
      ++result.steps;
    }
    ++result.epochs_run;
    result.base_accuracy = base_accuracy(result.model, eval_set);
    if (result.base_accuracy >= config.pretrain.accuracy_floor) break;
  }
  if (config.pretrain.epochs > 0 && result.base_accuracy < config.pretrain.accuracy_floor) {
    throw Error(ErrorCode::kUnreachable,
                "pretraining reached base accuracy " + std::to_string(result.base_accuracy) +
                    " < floor " + std::to_string(config.pretrain.accuracy_floor) +
                    " after " + std::to_string(result.epochs_run) +
                    " epochs; lower data.noise or raise pretrain.epochs");
  }
  return result;
}

std::vector<double> score_samples(const Model& model, const std::vector<SyntheticSample>& samples) {
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); i += kEvalBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(samples.size(), i + kEvalBatch); ++j) idx.push_back(j);
    const ForwardResult out = forward(model, make_batch(samples, idx, false));
    scores.insert(scores.end(), out.probabilities.begin(), out.probabilities.end());
  }
  return scores;
}

SplitMetrics evaluate_split(const Model& model, const std::vector<SyntheticSample>& samples) {
  ScoredSet set;
  set.scores = score_samples(model, samples);
  for (const auto& s : samples) {
    set.labels.push_back(s.label);
    set.group_ids.push_back(s.clip_id);
  }
  return {evaluate_metrics(set), evaluate_metrics(video_level(set))};
}

RunRecord run_finetune(const TrainConfig& config, const Model& pretrained, const Splits& splits,
                       const FinetuneOptions& options) {
  validate(config);
  const auto started = std::chrono::steady_clock::now();
  RunRecord record;
  record.config_json = config_to_json(config);
  Model& model = record.model;
  model = pretrained;
  Rng rng = Rng(config.seed).fork(kFinetuneStream);

  const TrainScope scope = config.masft ? TrainScope::kArtifacts : TrainScope::kAttentionDense;
  if (config.masft) decompose_attention(model, config.model.decomposition);
  reset_binary_head(model, rng);

  auto groups = parameter_groups(model, scope);
  std::vector<std::size_t> group_sizes;
  std::vector<std::size_t> layer_groups;
  std::vector<std::size_t> layer_sizes;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    group_sizes.push_back(groups[i].size());
    if (groups[i].layer) {
      layer_groups.push_back(i);
      layer_sizes.push_back(groups[i].size());
    }
  }
  const std::size_t n_layers = layer_groups.size();
  GradientStats stats(layer_sizes);
  OptimizerState opt(config.optimizer, group_sizes);

  const std::size_t n_train = splits.finetune_train.size();
  const std::size_t steps_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
  StatsConfig stats_cfg = config.stats;
  stats_cfg.warmup_steps = config.mask.warmup_steps < 0
                               ? steps_per_epoch
                               : static_cast<std::size_t>(config.mask.warmup_steps);
  const std::size_t m = config.mask.enabled ? std::min(config.mask.m, n_layers) : n_layers;
  for (std::size_t l : options.frozen_layers) {
    if (l >= n_layers) throw Error(ErrorCode::kInvalidArgument, "frozen layer index out of range");
  }

  std::vector<std::vector<double>> layer_grads(n_layers);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(n_train, config.batch_size, rng)) {
      const TrainBatch batch = make_batch(splits.finetune_train, idx, false);
      Gradients g = backward(model, batch, config.weights, scope);
      for (std::size_t l = 0; l < n_layers; ++l) layer_grads[l] = g.groups[layer_groups[l]];
      update_stats(stats, layer_grads, stats_cfg);

      IterationRecord it;
      it.t = stats.step();
      it.epoch = epoch;
      it.loss = g.loss;
      it.bvg = compute_bvg(stats, stats_cfg);
      std::vector<double> ranking = it.bvg;
      for (std::size_t l : options.frozen_layers) {
        ranking[l] = -std::numeric_limits<double>::infinity();
      }
      it.mask = build_mask(ranking, m, it.t, stats_cfg);
      for (std::size_t l : options.frozen_layers) it.mask.bits[l] = 0;

      apply_update(groups, g.groups, it.mask, opt);
      if (options.observer) options.observer(it, layer_grads);
      record.iterations.push_back(std::move(it));
    }
  }

  record.optimizer = std::move(opt);
  record.in_domain = evaluate_split(model, splits.test_indomain);
  record.heldout = evaluate_split(model, splits.test_heldout);
  record.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (!config.iteration_log.empty()) {
    save_csv(config.iteration_log, iteration_log_table(record), record.config_json);
  }
  return record;
}

CsvTable iteration_log_table(const RunRecord& record) {
  CsvTable table;
  table.name = "iterations";
  table.header = {"t", "epoch", "cls", "orth_mean", "spec_mean", "total", "n"};
  const std::size_t n_layers = record.iterations.empty() ? 0 : record.iterations.front().bvg.size();
  for (std::size_t l = 0; l < n_layers; ++l) table.header.push_back("bvg_" + std::to_string(l));
  for (std::size_t l = 0; l < n_layers; ++l) table.header.push_back("mask_" + std::to_string(l));
  for (const auto& it : record.iterations) {
    std::vector<std::string> row = {std::to_string(it.t),          std::to_string(it.epoch),
                                    format_exact(it.loss.cls),     format_exact(it.loss.orth_mean),
                                    format_exact(it.loss.spec_mean), format_exact(it.loss.total),
                                    std::to_string(it.loss.n)};
    for (double b : it.bvg) row.push_back(format_exact(b));
    for (auto bit : it.mask.bits) row.push_back(bit ? "1" : "0");
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::uint64_t cell_seed(std::uint64_t base_seed, const std::string& cell_key) {
  // FNV-1a, then mixed, so neighbouring keys get unrelated streams.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : cell_key) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return base_seed + mix64(h);
}

std::vector<CsvTable> run_ablation(const TrainConfig& config, const Model& pretrained,
                                   const Splits& splits, const AblationGrid& grid) {
  struct Cell {
    std::vector<std::string> key_cells;
    TrainConfig config;
  };
  const std::size_t n_layers = config.model.n_decomposable();

  auto run_table = [&](const std::string& name, const std::vector<std::string>& key_header,
                       std::vector<Cell> cells) {
    CsvTable table;
    table.name = name;
    table.header = key_header;
    for (const auto& c : metric_columns()) table.header.push_back(c);
    table.header.push_back("error");
    for (auto& cell : cells) {
      std::string key = name;
      for (const auto& k : cell.key_cells) key += "/" + k;
      cell.config.seed = cell_seed(config.seed, key);
      cell.config.iteration_log.clear();
      std::vector<std::string> row = cell.key_cells;
      try {
        const RunRecord r = run_finetune(cell.config, pretrained, splits);
        for (auto& v : metric_cells(r)) row.push_back(std::move(v));
        row.push_back("");
      } catch (const Error& e) {
        for (std::size_t i = 0; i < metric_columns().size(); ++i) row.push_back("nan");
        row.push_back(error_code_name(e.code()));
      }
      table.rows.push_back(std::move(row));
    }
    return table;
  };

  std::vector<CsvTable> tables;
  const std::pair<bool, bool> on_off[] = {{false, false}, {true, false}, {false, true}, {true, true}};
  if (grid.components) {
    std::vector<Cell> cells;
    for (auto [masft, slm] : on_off) {
      TrainConfig c = config;
      c.masft = masft;
      c.mask.enabled = slm;
      cells.push_back({{masft ? "1" : "0", slm ? "1" : "0"}, c});
    }
    tables.push_back(run_table("components", {"masft", "slm"}, std::move(cells)));
  }
  if (grid.losses) {
    std::vector<Cell> cells;
    for (auto [orth, spec] : on_off) {
      TrainConfig c = config;
      c.weights.orth = orth ? 1.0 : 0.0;
      c.weights.spec = spec ? 1.0 : 0.0;
      cells.push_back({{orth ? "1" : "0", spec ? "1" : "0"}, c});
    }
    tables.push_back(run_table("losses", {"lambda_orth", "lambda_spec"}, std::move(cells)));
  }
  if (!grid.k_values.empty()) {
    std::vector<Cell> cells;
    for (std::size_t k : grid.k_values) {
      TrainConfig c = config;
      c.model.decomposition.num_artifacts = k;
      cells.push_back({{std::to_string(k)}, c});
    }
    tables.push_back(run_table("artifact_subspaces", {"K"}, std::move(cells)));
  }
  if (!grid.m_values.empty()) {
    std::vector<Cell> cells;
    for (std::size_t m : grid.m_values) {
      TrainConfig c = config;
      c.mask.m = std::min(m, n_layers);
      cells.push_back({{std::to_string(m), std::to_string(c.mask.m)}, c});
    }
    tables.push_back(run_table("masked_layers", {"m_requested", "m"}, std::move(cells)));
  }
  return tables;
}

CsvTable run_robustness(const TrainConfig& config, const Model& finetuned, const Splits& splits) {
  validate(config);
  const SignalWorld world(config.data);
  CsvTable table;
  table.name = "robustness";
  table.header = {"distortion", "level", "video_auc", "frame_auc"};
  const SplitMetrics clean = evaluate_split(finetuned, splits.test_indomain);
  table.rows.push_back({"clean", "0", format_metric(clean.video.auc), format_metric(clean.frame.auc)});
  for (ArtifactFamily family : all_families()) {
    for (int level = 1; level <= kMaxLevel; ++level) {
      const auto distorted = distort_split(world, splits.test_indomain, family, level);
      const SplitMetrics m = evaluate_split(finetuned, distorted);
      table.rows.push_back({std::string(family_name(family)), std::to_string(level),
                            format_metric(m.video.auc), format_metric(m.frame.auc)});
    }
  }
  return table;
}

std::vector<LayerInspection> decompose_inspect(const Model& pretrained,
                                               const DecompositionConfig& config) {
  std::vector<LayerInspection> out;
  for (std::size_t b = 0; b < pretrained.blocks.size(); ++b) {
    for (std::size_t s = 0; s < 4; ++s) {
      const Projection& p = pretrained.blocks[b].attn[s];
      const DecomposedLayer layer =
          p.decomposed() ? p.layer() : decompose(p.dense(), config, 4 * b + s);
      LayerInspection info;
      info.layer_id = layer.layer_id;
      info.total_rank = layer.total_rank();
      info.semantic_rank = layer.semantic.rank();
      const double energy = layer.pretrained_frob_sq;
      for (double sv : layer.semantic.s) info.semantic_energy += sv * sv / energy;
      for (const auto& a : layer.artifacts) {
        info.artifact_ranks.push_back(a.rank());
        double e = 0.0;
        for (double sv : a.s) e += sv * sv / energy;
        info.artifact_energy.push_back(e);
      }
      info.orth_init = orth_loss(layer);
      info.spec_init = spec_loss(layer);
      out.push_back(std::move(info));
    }
  }
  return out;
}

CsvTable inspection_table(const std::vector<LayerInspection>& layers) {
  CsvTable table;
  table.name = "inspect";
  table.header = {"layer_id", "R", "r", "artifact_ranks", "semantic_energy", "artifact_energy",
                  "orth_init", "spec_init"};
  for (const auto& l : layers) {
    std::string ranks;
    std::string energies;
    for (std::size_t k = 0; k < l.artifact_ranks.size(); ++k) {
      if (k) {
        ranks += ';';
        energies += ';';
      }
      ranks += std::to_string(l.artifact_ranks[k]);
      energies += format_exact(l.artifact_energy[k]);
    }
    table.rows.push_back({std::to_string(l.layer_id), std::to_string(l.total_rank),
                          std::to_string(l.semantic_rank), ranks, format_exact(l.semantic_energy),
                          energies, format_exact(l.orth_init), format_exact(l.spec_init)});
  }
  return table;
}

}  // namespace masm
