#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "masm/matrix.hpp"
#include "masm/network.hpp"
#include "masm/rng.hpp"

namespace masm {

// Parameterized token-signal corruptions. Each one stands in for a forgery
// mechanism when used as an artifact and for a quality degradation when used
// as a robustness distortion.
enum class ArtifactFamily {
  kLocalizedPatch,
  kHighFrequencyRipple,
  kTokenBlur,
  kBlockQuantization,
  kStructuredNoise,
};

inline constexpr std::size_t kNumFamilies = 5;
inline constexpr int kMaxLevel = 5;

std::string_view family_name(ArtifactFamily family) noexcept;
// Throws Error(kInvalidArgument) for unknown names.
ArtifactFamily parse_family(std::string_view name);
std::vector<ArtifactFamily> all_families();

struct SyntheticSample {
  Matrix tokens;  // n_tokens x d_model
  int label = 0;  // 0 real, 1 fake
  int base_class = 0;
  std::optional<ArtifactFamily> family;      // set iff fake
  std::optional<ArtifactFamily> distortion;  // robustness corruption, if any
  std::optional<int> intensity;              // 1..5, set iff distorted
  std::int64_t clip_id = 0;

  bool operator==(const SyntheticSample&) const = default;
};

struct DataConfig {
  std::size_t d_model = 16;
  std::size_t n_tokens = 8;
  std::size_t n_base_classes = 4;
  std::vector<ArtifactFamily> families_train = {ArtifactFamily::kLocalizedPatch,
                                                ArtifactFamily::kHighFrequencyRipple,
                                                ArtifactFamily::kTokenBlur};
  std::vector<ArtifactFamily> families_heldout = {ArtifactFamily::kBlockQuantization,
                                                  ArtifactFamily::kStructuredNoise};
  std::size_t n_pretrain = 1024;
  std::size_t n_finetune = 4096;
  std::size_t n_test = 512;
  std::size_t n_heldout = 512;
  std::size_t clip_size = 8;
  double noise = 0.3;
  int artifact_level = 3;
  std::uint64_t seed = 1;
};

// Throws Error(kConfig) describing the first violated constraint.
void validate(const DataConfig& config);

// Fixed per-seed structure. A random rotation splits the channels into a
// content subspace, which holds the class prototypes and clip offsets, and a
// quiet artifact band of max(1, d/4) dimensions. Family directions live in the
// band and share a common component, so families are related but distinct.
class SignalWorld {
 public:
  explicit SignalWorld(const DataConfig& config);

  const DataConfig& config() const noexcept { return config_; }
  const Matrix& prototype(std::size_t base_class) const { return prototypes_.at(base_class); }
  const std::vector<double>& family_direction(ArtifactFamily family) const;
  const Matrix& content_basis() const noexcept { return content_; }  // d x (d - band)
  const Matrix& band_basis() const noexcept { return band_; }        // d x band

 private:
  DataConfig config_;
  Matrix content_;
  Matrix band_;
  std::vector<Matrix> prototypes_;
  std::vector<std::vector<double>> directions_;
};

std::size_t artifact_band_dims(std::size_t d_model) noexcept;

// One clip of real samples of a single base class: prototype + clip offset +
// per-sample noise.
std::vector<SyntheticSample> gen_real_clip(const SignalWorld& world, int base_class,
                                           std::int64_t clip_id, Rng& rng);

// `count` real samples in clips of config.clip_size, classes drawn per clip.
std::vector<SyntheticSample> gen_real(const SignalWorld& world, std::size_t count,
                                      std::int64_t first_clip_id, Rng& rng);

// Pure token transform; deterministic given (tokens, family, level, rng state).
Matrix corrupt_tokens(const SignalWorld& world, const Matrix& tokens, ArtifactFamily family,
                      int level, Rng& rng);

// Fake version of `sample`: the family transform plus a forgery residue, a
// constant offset along the family direction whose size is proportional to
// the RMS per-token change the transform made. Label flipped, family recorded.
SyntheticSample apply_artifact(const SignalWorld& world, const SyntheticSample& sample,
                               ArtifactFamily family, int level, Rng& rng);

// Robustness corruption: label kept, distortion and intensity recorded.
SyntheticSample apply_distortion(const SignalWorld& world, const SyntheticSample& sample,
                                 ArtifactFamily family, int level, Rng& rng);

struct Splits {
  std::vector<SyntheticSample> pretrain;  // real only, base-class labels
  std::vector<SyntheticSample> finetune_train;
  std::vector<SyntheticSample> test_indomain;
  std::vector<SyntheticSample> test_heldout;
};

Splits build_splits(const DataConfig& config);

// The in-domain test set with every sample (real and fake) distorted.
std::vector<SyntheticSample> distort_split(const SignalWorld& world,
                                           const std::vector<SyntheticSample>& samples,
                                           ArtifactFamily family, int level);

// Detection batch (labels 0/1) or pretraining batch (labels = base class).
TrainBatch make_batch(const std::vector<SyntheticSample>& samples,
                      const std::vector<std::size_t>& indices, bool base_class_labels);
TrainBatch make_batch(const std::vector<SyntheticSample>& samples, bool base_class_labels);

// CSV: clip_id,label,base_class,family,distortion,intensity,x0..x{T*D-1};
// values with 17 significant digits so import is bit-exact.
void write_samples_csv(std::ostream& out, const std::vector<SyntheticSample>& samples);
std::vector<SyntheticSample> read_samples_csv(std::istream& in, std::size_t n_tokens,
                                              std::size_t d_model);

}  // namespace masm
