#include "masm/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "masm/error.hpp"

namespace masm {

namespace {

using nlohmann::json;

// Walks one JSON object, consuming known keys and rejecting the rest.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail("expected an object");
    for (auto it = node_.begin(); it != node_.end(); ++it) pending_.push_back(it.key());
  }

  template <typename T>
  void read(const char* key, T& out) {
    auto it = node_.find(key);
    if (it == node_.end()) return;
    consume(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) fail(std::string(key) + ": expected a boolean");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!it->is_number_unsigned()) fail(std::string(key) + ": expected a non-negative integer");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) fail(std::string(key) + ": expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) fail(std::string(key) + ": expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) fail(std::string(key) + ": expected a string");
      }
      out = it->template get<T>();
    } catch (const json::exception& e) {
      fail(std::string(key) + ": " + e.what());
    }
  }

  // Returns the nested section, or nullopt-like empty object if absent.
  bool child(const char* key, json& out) {
    auto it = node_.find(key);
    if (it == node_.end()) return false;
    consume(key);
    out = *it;
    return true;
  }

  const std::string& path() const { return path_; }

  void finish() const {
    if (!pending_.empty()) fail("unknown key '" + pending_.front() + "'");
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::kConfig, "config " + path_ + ": " + msg);
  }

 private:
  void consume(const std::string& key) { std::erase(pending_, key); }

  const json& node_;
  std::string path_;
  std::vector<std::string> pending_;
};

std::vector<ArtifactFamily> read_families(const json& node, const std::string& path) {
  if (!node.is_array()) throw Error(ErrorCode::kConfig, "config " + path + ": expected an array");
  std::vector<ArtifactFamily> out;
  for (const auto& item : node) {
    if (!item.is_string()) {
      throw Error(ErrorCode::kConfig, "config " + path + ": family names must be strings");
    }
    try {
      out.push_back(parse_family(item.get<std::string>()));
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, "config " + path + ": " + e.what());
    }
  }
  return out;
}

json families_json(const std::vector<ArtifactFamily>& families) {
  json arr = json::array();
  for (auto f : families) arr.push_back(std::string(family_name(f)));
  return arr;
}

void parse_model(const json& node, TrainConfig& cfg) {
  Section s(node, "model");
  s.read("d_model", cfg.model.d_model);
  s.read("n_blocks", cfg.model.n_blocks);
  s.read("n_tokens", cfg.model.n_tokens);
  s.read("d_hidden", cfg.model.d_hidden);
  s.read("n_classes_pretrain", cfg.model.n_classes_pretrain);
  s.finish();
}

void parse_decomposition(const json& node, TrainConfig& cfg) {
  Section s(node, "decomposition");
  s.read("K", cfg.model.decomposition.num_artifacts);
  std::string policy = std::holds_alternative<FixedRank>(cfg.model.decomposition.rank_policy)
                           ? "fixed"
                           : "energy";
  double tau = 0.9;
  std::size_t fixed = 1;
  if (auto* e = std::get_if<EnergyFraction>(&cfg.model.decomposition.rank_policy)) tau = e->tau;
  if (auto* f = std::get_if<FixedRank>(&cfg.model.decomposition.rank_policy)) fixed = f->r;
  s.read("rank_policy", policy);
  s.read("energy_fraction", tau);
  s.read("fixed_rank", fixed);
  s.finish();
  if (policy == "energy") {
    cfg.model.decomposition.rank_policy = EnergyFraction{tau};
  } else if (policy == "fixed") {
    cfg.model.decomposition.rank_policy = FixedRank{fixed};
  } else {
    s.fail("rank_policy must be 'energy' or 'fixed'");
  }
}

void parse_data(const json& node, TrainConfig& cfg) {
  Section s(node, "data");
  s.read("n_base_classes", cfg.data.n_base_classes);
  json fam;
  if (s.child("families_train", fam)) cfg.data.families_train = read_families(fam, "data.families_train");
  if (s.child("families_heldout", fam)) {
    cfg.data.families_heldout = read_families(fam, "data.families_heldout");
  }
  s.read("n_pretrain", cfg.data.n_pretrain);
  s.read("n_finetune", cfg.data.n_finetune);
  s.read("n_test", cfg.data.n_test);
  s.read("n_heldout", cfg.data.n_heldout);
  s.read("clip_size", cfg.data.clip_size);
  s.read("noise", cfg.data.noise);
  s.read("artifact_level", cfg.data.artifact_level);
  s.read("seed", cfg.data.seed);
  s.finish();
}

void parse_optimizer(const json& node, TrainConfig& cfg) {
  Section s(node, "optimizer");
  std::string mode = cfg.optimizer.mode == OptimizerMode::kAdaptive ? "adaptive" : "plain";
  s.read("mode", mode);
  s.read("lr", cfg.optimizer.lr);
  s.read("beta1", cfg.optimizer.beta1);
  s.read("beta2", cfg.optimizer.beta2);
  s.read("eps", cfg.optimizer.eps);
  s.read("batch_size", cfg.batch_size);
  s.read("epochs", cfg.epochs);
  s.finish();
  if (mode == "adaptive") {
    cfg.optimizer.mode = OptimizerMode::kAdaptive;
  } else if (mode == "plain") {
    cfg.optimizer.mode = OptimizerMode::kPlain;
  } else {
    s.fail("mode must be 'adaptive' or 'plain'");
  }
}

}  // namespace

TrainConfig default_config() { return TrainConfig{}; }

TrainConfig with_seed(TrainConfig config, std::uint64_t seed) {
  config.seed = seed;
  config.data.seed = seed;
  return config;
}

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfig, "config: " + msg); };
  if (cfg.model.d_model == 0 || cfg.model.n_blocks == 0 || cfg.model.n_tokens < 2 ||
      cfg.model.d_hidden == 0) {
    fail("model dimensions must be positive (n_tokens >= 2)");
  }
  if (cfg.model.n_classes_pretrain != cfg.data.n_base_classes) {
    fail("model.n_classes_pretrain must equal data.n_base_classes");
  }
  if (cfg.model.decomposition.num_artifacts == 0) fail("decomposition.K must be >= 1");
  if (const auto* e = std::get_if<EnergyFraction>(&cfg.model.decomposition.rank_policy)) {
    if (!(e->tau > 0.0 && e->tau <= 1.0)) fail("decomposition.energy_fraction must be in (0, 1]");
  }
  if (cfg.mask.m == 0) fail("mask.m must be >= 1");
  if (!(cfg.stats.alpha >= 0.0 && cfg.stats.alpha < 1.0)) fail("stats.alpha must be in [0, 1)");
  if (!(cfg.stats.eps > 0.0)) fail("stats.eps must be > 0");
  if (!(cfg.optimizer.lr > 0.0)) fail("optimizer.lr must be > 0");
  if (cfg.batch_size == 0 || cfg.pretrain.batch_size == 0) fail("batch sizes must be >= 1");
  if (cfg.weights.orth < 0.0 || cfg.weights.spec < 0.0) fail("loss weights must be >= 0");
  validate(cfg.data);
}

TrainConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfig, std::string("config: parse error: ") + e.what());
  }
  TrainConfig cfg = default_config();
  Section s(root, "<root>");
  s.read("seed", cfg.seed);
  s.read("masft", cfg.masft);
  s.read("iteration_log", cfg.iteration_log);
  json child;
  if (s.child("model", child)) parse_model(child, cfg);
  if (s.child("decomposition", child)) parse_decomposition(child, cfg);
  if (s.child("data", child)) parse_data(child, cfg);
  if (s.child("optimizer", child)) parse_optimizer(child, cfg);
  if (s.child("mask", child)) {
    Section m(child, "mask");
    m.read("enabled", cfg.mask.enabled);
    m.read("m", cfg.mask.m);
    m.read("warmup_steps", cfg.mask.warmup_steps);
    m.finish();
  }
  if (s.child("stats", child)) {
    Section st(child, "stats");
    st.read("alpha", cfg.stats.alpha);
    st.read("eps", cfg.stats.eps);
    st.finish();
  }
  if (s.child("loss", child)) {
    Section l(child, "loss");
    l.read("lambda_orth", cfg.weights.orth);
    l.read("lambda_spec", cfg.weights.spec);
    l.finish();
  }
  if (s.child("pretrain", child)) {
    Section p(child, "pretrain");
    p.read("epochs", cfg.pretrain.epochs);
    p.read("lr", cfg.pretrain.lr);
    p.read("batch_size", cfg.pretrain.batch_size);
    p.read("accuracy_floor", cfg.pretrain.accuracy_floor);
    p.finish();
  }
  s.finish();
  cfg.data.d_model = cfg.model.d_model;
  cfg.data.n_tokens = cfg.model.n_tokens;
  validate(cfg);
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_to_json(const TrainConfig& cfg, bool pretty) {
  json root;
  root["seed"] = cfg.seed;
  root["masft"] = cfg.masft;
  root["iteration_log"] = cfg.iteration_log;
  root["model"] = {{"d_model", cfg.model.d_model},
                   {"n_blocks", cfg.model.n_blocks},
                   {"n_tokens", cfg.model.n_tokens},
                   {"d_hidden", cfg.model.d_hidden},
                   {"n_classes_pretrain", cfg.model.n_classes_pretrain}};
  json dec = {{"K", cfg.model.decomposition.num_artifacts}};
  if (const auto* e = std::get_if<EnergyFraction>(&cfg.model.decomposition.rank_policy)) {
    dec["rank_policy"] = "energy";
    dec["energy_fraction"] = e->tau;
  } else {
    dec["rank_policy"] = "fixed";
    dec["fixed_rank"] = std::get<FixedRank>(cfg.model.decomposition.rank_policy).r;
  }
  root["decomposition"] = dec;
  root["data"] = {{"n_base_classes", cfg.data.n_base_classes},
                  {"families_train", families_json(cfg.data.families_train)},
                  {"families_heldout", families_json(cfg.data.families_heldout)},
                  {"n_pretrain", cfg.data.n_pretrain},
                  {"n_finetune", cfg.data.n_finetune},
                  {"n_test", cfg.data.n_test},
                  {"n_heldout", cfg.data.n_heldout},
                  {"clip_size", cfg.data.clip_size},
                  {"noise", cfg.data.noise},
                  {"artifact_level", cfg.data.artifact_level},
                  {"seed", cfg.data.seed}};
  root["optimizer"] = {{"mode", cfg.optimizer.mode == OptimizerMode::kAdaptive ? "adaptive" : "plain"},
                       {"lr", cfg.optimizer.lr},
                       {"beta1", cfg.optimizer.beta1},
                       {"beta2", cfg.optimizer.beta2},
                       {"eps", cfg.optimizer.eps},
                       {"batch_size", cfg.batch_size},
                       {"epochs", cfg.epochs}};
  root["mask"] = {{"enabled", cfg.mask.enabled}, {"m", cfg.mask.m}, {"warmup_steps", cfg.mask.warmup_steps}};
  root["stats"] = {{"alpha", cfg.stats.alpha}, {"eps", cfg.stats.eps}};
  root["loss"] = {{"lambda_orth", cfg.weights.orth}, {"lambda_spec", cfg.weights.spec}};
  root["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                      {"lr", cfg.pretrain.lr},
                      {"batch_size", cfg.pretrain.batch_size},
                      {"accuracy_floor", cfg.pretrain.accuracy_floor}};
  return pretty ? root.dump(2) : root.dump();
}

}  // namespace masm
