#include "masm/data_synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "masm/error.hpp"

namespace masm {

namespace {

constexpr std::string_view kFamilyNames[kNumFamilies] = {
    "localized-patch", "high-frequency-ripple", "token-blur", "block-quantization",
    "structured-noise"};

// Stream ids for Rng::fork.
constexpr std::uint64_t kWorldStream = 0x57'4F'52'4C'44;  // "WORLD"
constexpr std::uint64_t kSplitStride = 1ULL << 32;
constexpr std::int64_t kClipIdStride = 1'000'000;

enum SplitCode : std::uint64_t { kPretrainSplit = 1, kFinetuneSplit, kTestSplit, kHeldoutSplit };

std::vector<double> unit_direction(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

// Shared component of the family directions inside the artifact band.
constexpr double kSharedDirection = 0.8;
// Forgery residue per unit of RMS per-token change.
constexpr double kResidueGain = 2.0;

// Gram-Schmidt on Gaussian columns.
Matrix random_orthogonal(std::size_t d, Rng& rng) {
  Matrix q(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> col(d);
    for (;;) {
      for (double& x : col) x = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < j; ++k) {
          double proj = 0.0;
          for (std::size_t i = 0; i < d; ++i) proj += q(i, k) * col[i];
          for (std::size_t i = 0; i < d; ++i) col[i] -= proj * q(i, k);
        }
      }
      double norm = 0.0;
      for (double x : col) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (std::size_t i = 0; i < d; ++i) q(i, j) = col[i] / norm;
        break;
      }
    }
  }
  return q;
}

std::string_view optional_family_name(const std::optional<ArtifactFamily>& f) {
  return f ? family_name(*f) : std::string_view("none");
}

}  // namespace

std::string_view family_name(ArtifactFamily family) noexcept {
  return kFamilyNames[static_cast<std::size_t>(family)];
}

ArtifactFamily parse_family(std::string_view name) {
  for (std::size_t i = 0; i < kNumFamilies; ++i) {
    if (kFamilyNames[i] == name) return static_cast<ArtifactFamily>(i);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown artifact family '" + std::string(name) + "'");
}

std::vector<ArtifactFamily> all_families() {
  std::vector<ArtifactFamily> out;
  for (std::size_t i = 0; i < kNumFamilies; ++i) out.push_back(static_cast<ArtifactFamily>(i));
  return out;
}

void validate(const DataConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfig, "data: " + msg); };
  if (c.d_model < 2 || c.n_tokens < 2) fail("d_model and n_tokens must be >= 2");
  if (c.n_base_classes < 2) fail("need at least 2 base classes");
  if (c.families_train.empty() || c.families_heldout.empty()) fail("family sets must be non-empty");
  for (auto f : c.families_train) {
    if (std::find(c.families_heldout.begin(), c.families_heldout.end(), f) !=
        c.families_heldout.end()) {
      fail("family '" + std::string(family_name(f)) + "' is both trained and held out");
    }
  }
  if (c.clip_size == 0) fail("clip_size must be >= 1");
  for (std::size_t n : {c.n_finetune, c.n_test, c.n_heldout}) {
    if (n == 0 || n % 2 != 0) fail("detection split sizes must be positive and even");
  }
  if (c.n_pretrain == 0) fail("n_pretrain must be positive");
  if (!(c.noise >= 0.0)) fail("noise must be >= 0");
  if (c.artifact_level < 1 || c.artifact_level > kMaxLevel) fail("artifact_level must be in 1..5");
}

std::size_t artifact_band_dims(std::size_t d_model) noexcept {
  return std::max<std::size_t>(1, d_model / 4);
}

SignalWorld::SignalWorld(const DataConfig& config) : config_(config) {
  validate(config_);
  Rng rng = Rng(config_.seed).fork(kWorldStream);
  const std::size_t t_count = config_.n_tokens;
  const std::size_t d = config_.d_model;
  const std::size_t band = artifact_band_dims(d);
  const std::size_t content = d - band;

  const Matrix rotation = random_orthogonal(d, rng);
  content_ = column_block(rotation, 0, content);
  band_ = column_block(rotation, content, d);

  // Each latent content channel is a sum of three slow sinusoids along the
  // token axis.
  for (std::size_t c = 0; c < config_.n_base_classes; ++c) {
    Matrix latent(t_count, content);
    for (std::size_t ch = 0; ch < content; ++ch) {
      for (int f = 1; f <= 3; ++f) {
        const double amp = rng.normal() / std::sqrt(3.0);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double freq = 0.5 * f / static_cast<double>(t_count);
        for (std::size_t t = 0; t < t_count; ++t) {
          latent(t, ch) += amp * std::sin(2.0 * std::numbers::pi * freq * t + phase);
        }
      }
    }
    prototypes_.push_back(matmul_nt(latent, content_));
  }

  const std::vector<double> shared = unit_direction(band, rng);
  for (std::size_t f = 0; f < kNumFamilies; ++f) {
    std::vector<double> mix = unit_direction(band, rng);
    double norm = 0.0;
    for (std::size_t i = 0; i < band; ++i) {
      mix[i] = kSharedDirection * shared[i] + std::sqrt(1.0 - kSharedDirection * kSharedDirection) * mix[i];
      norm += mix[i] * mix[i];
    }
    std::vector<double> dir(d, 0.0);
    for (std::size_t ch = 0; ch < d; ++ch)
      for (std::size_t i = 0; i < band; ++i) dir[ch] += band_(ch, i) * mix[i] / std::sqrt(norm);
    directions_.push_back(std::move(dir));
  }
}

const std::vector<double>& SignalWorld::family_direction(ArtifactFamily family) const {
  return directions_.at(static_cast<std::size_t>(family));
}

std::vector<SyntheticSample> gen_real_clip(const SignalWorld& world, int base_class,
                                           std::int64_t clip_id, Rng& rng) {
  const DataConfig& cfg = world.config();
  const Matrix& proto = world.prototype(static_cast<std::size_t>(base_class));
  const double gain = 1.0 + 0.2 * rng.normal();
  const Matrix& basis = world.content_basis();
  std::vector<double> offset(cfg.d_model, 0.0);
  for (std::size_t i = 0; i < basis.cols(); ++i) {
    const double z = 0.3 * rng.normal();
    for (std::size_t ch = 0; ch < cfg.d_model; ++ch) offset[ch] += z * basis(ch, i);
  }
  std::vector<SyntheticSample> clip;
  clip.reserve(cfg.clip_size);
  for (std::size_t i = 0; i < cfg.clip_size; ++i) {
    SyntheticSample s;
    s.tokens = Matrix(cfg.n_tokens, cfg.d_model);
    for (std::size_t t = 0; t < cfg.n_tokens; ++t)
      for (std::size_t ch = 0; ch < cfg.d_model; ++ch)
        s.tokens(t, ch) = gain * proto(t, ch) + offset[ch] + cfg.noise * rng.normal();
    s.label = 0;
    s.base_class = base_class;
    s.clip_id = clip_id;
    clip.push_back(std::move(s));
  }
  return clip;
}

std::vector<SyntheticSample> gen_real(const SignalWorld& world, std::size_t count,
                                      std::int64_t first_clip_id, Rng& rng) {
  std::vector<SyntheticSample> out;
  out.reserve(count);
  std::int64_t clip_id = first_clip_id;
  while (out.size() < count) {
    const int base_class = static_cast<int>(rng.index(world.config().n_base_classes));
    auto clip = gen_real_clip(world, base_class, clip_id++, rng);
    for (auto& s : clip) {
      if (out.size() == count) break;
      out.push_back(std::move(s));
    }
  }
  return out;
}

Matrix corrupt_tokens(const SignalWorld& world, const Matrix& tokens, ArtifactFamily family,
                      int level, Rng& rng) {
  if (level < 1 || level > kMaxLevel) {
    throw Error(ErrorCode::kInvalidArgument, "corruption level must be in 1..5");
  }
  if (static_cast<std::size_t>(family) >= kNumFamilies) {
    throw Error(ErrorCode::kInvalidArgument, "unknown artifact family id");
  }
  const std::size_t t_count = tokens.rows();
  const std::size_t d = tokens.cols();
  const double lv = static_cast<double>(level);
  const auto& dir = world.family_direction(family);
  Matrix out = tokens;
  switch (family) {
    case ArtifactFamily::kLocalizedPatch: {
      // Raised-cosine bump over a 3-token window along a fixed channel mix.
      const std::size_t width = std::min<std::size_t>(3, t_count);
      const std::size_t start = rng.index(t_count - width + 1);
      for (std::size_t w = 0; w < width; ++w) {
        const double bump =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (w + 1) / static_cast<double>(width + 1));
        for (std::size_t ch = 0; ch < d; ++ch) out(start + w, ch) += 0.5 * lv * bump * dir[ch];
      }
      break;
    }
    case ArtifactFamily::kHighFrequencyRipple: {
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      for (std::size_t t = 0; t < t_count; ++t) {
        const double alt = (t % 2 == 0 ? 1.0 : -1.0) * sign;
        for (std::size_t ch = 0; ch < d; ++ch) out(t, ch) += 0.15 * lv * alt * dir[ch];
      }
      break;
    }
    case ArtifactFamily::kTokenBlur: {
      // Blend toward a [1/4, 1/2, 1/4] smoothing with replicated borders.
      const double w = lv / kMaxLevel;
      for (std::size_t t = 0; t < t_count; ++t) {
        const std::size_t lo = t == 0 ? 0 : t - 1;
        const std::size_t hi = t + 1 == t_count ? t : t + 1;
        for (std::size_t ch = 0; ch < d; ++ch) {
          // Written as a difference so constant signals are an exact fixed point.
          const double delta =
              0.25 * (tokens(lo, ch) - tokens(t, ch)) + 0.25 * (tokens(hi, ch) - tokens(t, ch));
          out(t, ch) = tokens(t, ch) + w * delta;
        }
      }
      break;
    }
    case ArtifactFamily::kBlockQuantization: {
      const double step = 0.15 * lv;
      for (double& x : out.data()) x = step * std::round(x / step);
      break;
    }
    case ArtifactFamily::kStructuredNoise: {
      for (std::size_t t = 0; t < t_count; ++t) {
        const double z = rng.normal();
        for (std::size_t ch = 0; ch < d; ++ch) out(t, ch) += 0.12 * lv * z * dir[ch];
      }
      break;
    }
  }
  return out;
}

SyntheticSample apply_artifact(const SignalWorld& world, const SyntheticSample& sample,
                               ArtifactFamily family, int level, Rng& rng) {
  SyntheticSample out = sample;
  out.tokens = corrupt_tokens(world, sample.tokens, family, level, rng);
  const double change = frobenius_norm(out.tokens - sample.tokens) /
                        std::sqrt(static_cast<double>(sample.tokens.rows()));
  const auto& dir = world.family_direction(family);
  for (std::size_t t = 0; t < out.tokens.rows(); ++t)
    for (std::size_t ch = 0; ch < out.tokens.cols(); ++ch)
      out.tokens(t, ch) += kResidueGain * change * dir[ch];
  out.label = 1;
  out.family = family;
  return out;
}

SyntheticSample apply_distortion(const SignalWorld& world, const SyntheticSample& sample,
                                 ArtifactFamily family, int level, Rng& rng) {
  SyntheticSample out = sample;
  out.tokens = corrupt_tokens(world, sample.tokens, family, level, rng);
  out.distortion = family;
  out.intensity = level;
  return out;
}

namespace {

std::vector<SyntheticSample> detection_split(const SignalWorld& world, SplitCode code,
                                             std::size_t total,
                                             const std::vector<ArtifactFamily>& families) {
  const DataConfig& cfg = world.config();
  const Rng root(cfg.seed);
  const std::int64_t id_base = static_cast<std::int64_t>(code) * kClipIdStride;
  std::vector<SyntheticSample> out;
  out.reserve(total);

  // Real half, then fake half; every clip draws from its own stream.
  const std::size_t half = total / 2;
  std::size_t clip_index = 0;
  for (std::size_t made = 0; made < half; ++clip_index) {
    Rng rng = root.fork(code * kSplitStride + clip_index);
    const int base_class = static_cast<int>(rng.index(cfg.n_base_classes));
    for (auto& s : gen_real_clip(world, base_class, id_base + clip_index, rng)) {
      if (made == half) break;
      out.push_back(std::move(s));
      ++made;
    }
  }
  for (std::size_t made = 0, fake_clip = 0; made < half; ++clip_index, ++fake_clip) {
    Rng rng = root.fork(code * kSplitStride + clip_index);
    const int base_class = static_cast<int>(rng.index(cfg.n_base_classes));
    const ArtifactFamily family = families[fake_clip % families.size()];
    for (auto& s : gen_real_clip(world, base_class, id_base + clip_index, rng)) {
      if (made == half) break;
      out.push_back(apply_artifact(world, s, family, cfg.artifact_level, rng));
      ++made;
    }
  }
  return out;
}

}  // namespace

Splits build_splits(const DataConfig& config) {
  const SignalWorld world(config);
  Splits splits;
  {
    const Rng root(config.seed);
    const std::int64_t id_base = static_cast<std::int64_t>(kPretrainSplit) * kClipIdStride;
    std::size_t clip_index = 0;
    while (splits.pretrain.size() < config.n_pretrain) {
      Rng rng = root.fork(kPretrainSplit * kSplitStride + clip_index);
      const int base_class = static_cast<int>(rng.index(config.n_base_classes));
      for (auto& s : gen_real_clip(world, base_class, id_base + clip_index, rng)) {
        if (splits.pretrain.size() == config.n_pretrain) break;
        splits.pretrain.push_back(std::move(s));
      }
      ++clip_index;
    }
  }
  splits.finetune_train =
      detection_split(world, kFinetuneSplit, config.n_finetune, config.families_train);
  splits.test_indomain = detection_split(world, kTestSplit, config.n_test, config.families_train);
  splits.test_heldout =
      detection_split(world, kHeldoutSplit, config.n_heldout, config.families_heldout);
  return splits;
}

std::vector<SyntheticSample> distort_split(const SignalWorld& world,
                                           const std::vector<SyntheticSample>& samples,
                                           ArtifactFamily family, int level) {
  const Rng root = Rng(world.config().seed).fork(0xD157'0000ULL + static_cast<std::uint64_t>(family) * 16 +
                                                 static_cast<std::uint64_t>(level));
  std::vector<SyntheticSample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng = root.fork(i);
    out.push_back(apply_distortion(world, samples[i], family, level, rng));
  }
  return out;
}

TrainBatch make_batch(const std::vector<SyntheticSample>& samples,
                      const std::vector<std::size_t>& indices, bool base_class_labels) {
  TrainBatch batch;
  batch.inputs.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto& s = samples.at(i);
    batch.inputs.push_back(s.tokens);
    batch.labels.push_back(base_class_labels ? s.base_class : s.label);
    batch.clip_ids.push_back(s.clip_id);
  }
  return batch;
}

TrainBatch make_batch(const std::vector<SyntheticSample>& samples, bool base_class_labels) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(samples, all, base_class_labels);
}

void write_samples_csv(std::ostream& out, const std::vector<SyntheticSample>& samples) {
  out << "clip_id,label,base_class,family,distortion,intensity";
  const std::size_t width = samples.empty() ? 0 : samples.front().tokens.size();
  for (std::size_t i = 0; i < width; ++i) out << ",x" << i;
  out << '\n';
  char buf[32];
  for (const auto& s : samples) {
    out << s.clip_id << ',' << s.label << ',' << s.base_class << ','
        << optional_family_name(s.family) << ',' << optional_family_name(s.distortion) << ','
        << (s.intensity ? std::to_string(*s.intensity) : std::string("none"));
    for (double x : s.tokens.data()) {
      std::snprintf(buf, sizeof(buf), "%.17g", x);
      out << ',' << buf;
    }
    out << '\n';
  }
}

std::vector<SyntheticSample> read_samples_csv(std::istream& in, std::size_t n_tokens,
                                              std::size_t d_model) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIo, "sample CSV is empty");
  std::vector<SyntheticSample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 6 + n_tokens * d_model) {
      throw Error(ErrorCode::kIo, "sample CSV line " + std::to_string(line_no) + " has " +
                                      std::to_string(fields.size()) + " fields");
    }
    auto parse_int = [&](std::string_view f, auto& value) {
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw Error(ErrorCode::kIo, "bad integer '" + std::string(f) + "' on line " +
                                        std::to_string(line_no));
      }
    };
    SyntheticSample s;
    parse_int(fields[0], s.clip_id);
    parse_int(fields[1], s.label);
    parse_int(fields[2], s.base_class);
    if (fields[3] != "none") s.family = parse_family(fields[3]);
    if (fields[4] != "none") s.distortion = parse_family(fields[4]);
    if (fields[5] != "none") {
      int level = 0;
      parse_int(fields[5], level);
      s.intensity = level;
    }
    std::vector<double> values(n_tokens * d_model);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::string field(fields[6 + i]);
      char* end = nullptr;
      values[i] = std::strtod(field.c_str(), &end);
      if (end != field.c_str() + field.size()) {
        throw Error(ErrorCode::kIo, "bad value '" + field + "' on line " + std::to_string(line_no));
      }
    }
    s.tokens = Matrix(n_tokens, d_model, std::move(values));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace masm
