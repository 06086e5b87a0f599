#pragma once

#include "fillup/common.hpp"
#include "fillup/diffusion.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fillup::inversion {

enum class TokenInit { mean_of_learned, zero, random };

std::string to_string(TokenInit init);
TokenInit token_init_from_string(const std::string& s);

struct TokenSnapshot {
  int step = 0;
  Vector embedding;
};

/// A conditioning vector optimized for one class, plus its saved states.
struct ClassToken {
  int class_id = 0;
  Vector embedding;
  std::vector<TokenSnapshot> snapshots;
  TokenInit init = TokenInit::mean_of_learned;
  std::uint64_t seed = 0;
  std::uint64_t model_checksum = 0;
  std::vector<double> loss_curve;  // one entry per optimization step; not persisted

  int dim() const { return static_cast<int>(embedding.size()); }
  int steps() const { return snapshots.empty() ? 0 : snapshots.back().step; }
};

/// min(max(n_images * multiplier, lo), hi)
int step_heuristic(int n_images, int multiplier, int lo, int hi);

struct InversionConfig {
  double lr = 5e-2;
  int batch_size = 2;
  int steps = 200;
  int snapshot_every = 50;
  TokenInit init = TokenInit::mean_of_learned;
};

/// Optimizes a fresh token for `class_id` against the frozen denoiser using
/// the class samples (columns). Snapshots are taken every `snapshot_every`
/// steps and at the final step; with steps == 0 the single snapshot is the
/// initialization. Throws StageError on a non-finite loss or if the model
/// parameters change.
ClassToken invert_token(const diffusion::DenoiserModel& model, int class_id, const Matrix& samples,
                        const InversionConfig& config, std::uint64_t seed);

/// Slice sizes for an even split of n over k snapshots; the remainder goes
/// to the later snapshots.
std::vector<int> snapshot_split(int n, int k);

/// Draws n samples, split evenly across the token's snapshots.
Matrix generate_from_snapshots(const diffusion::NoisePredictor& model, const ClassToken& token, double w,
                               int n_samples, Rng& rng);

/// Token that uses only the final embedding.
ClassToken final_only(const ClassToken& token);

/// A token whose single snapshot is `embedding`.
ClassToken fixed_token(int class_id, const Vector& embedding);

/// Container file with header (class_id, d_c, steps, snapshot steps, seed,
/// model checksum) and a float32 blob of all snapshots in order.
void write_token(const std::filesystem::path& path, const ClassToken& token);
ClassToken read_token(const std::filesystem::path& path);

}  // namespace fillup::inversion
