#pragma once

#include "sarsgs/priors.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace sarsgs {

/// Shape of the DiC U-Net. Level i of the encoder runs at base_width·2^i
/// channels; each level ends in a stride-2 downsample.
struct UnetArch
{
  int              in_channels = 2;
  int              base_width = 32;
  int              groups = 8;
  int              time_dim = 128;
  std::vector<int> encoder_depths{5, 4};
  int              middle_depth = 4;
  std::vector<int> decoder_depths{4, 4};
  bool             condition_first = false; // also condition the first layer of each block

  int downsamples() const { return static_cast<int>(encoder_depths.size()); }

  void validate() const;

  nlohmann::json  to_json() const;
  static UnetArch from_json(nlohmann::json const &j);

  /// Every tensor the network needs, in canonical order, with its shape.
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> tensor_manifest() const;
};

struct WeightTensor
{
  std::string               name;
  std::vector<std::int64_t> shape;
  std::vector<float>        values;
};

/// Contents of an SGSW container.
struct WeightFile
{
  UnetArch                  arch;
  std::vector<double>       alpha_bar; // ᾱ_t for t = 1..T
  std::vector<WeightTensor> tensors;
  nlohmann::json            extra = nlohmann::json::object(); // carried through untouched (e.g. optimizer settings)
};

inline constexpr std::uint32_t kSgswVersion = 1;

/// Throws FormatError (magic, version, header syntax), ManifestError (missing
/// or mis-shaped tensors, bad schedule) or IoError (payload cut short).
WeightFile read_sgsw(std::filesystem::path const &path);
void       write_sgsw(std::filesystem::path const &path, WeightFile const &file);

/// Checks tensors against arch.tensor_manifest() and the schedule invariants.
void validate_weights(WeightFile const &file);

/// Neural noise predictor. Immutable after construction, so one instance may
/// be shared between threads.
class NeuralDenoiser final : public ScoreModel
{
public:
  explicit NeuralDenoiser(WeightFile const &file);
  ~NeuralDenoiser() override;
  NeuralDenoiser(NeuralDenoiser &&) noexcept;
  NeuralDenoiser &operator=(NeuralDenoiser &&) noexcept;

  UnetArch const &arch() const;

  /// 1-based training timestep whose ᾱ_t is nearest to alpha_bar.
  int timestep_for(double alpha_bar) const;

  /// Network output at an explicit timestep.
  Tensor forward(Tensor const &x, int t) const;

  Tensor predict_noise(Tensor const &x, double alpha_bar) const override;

  /// Exact input gradient by reverse-mode differentiation of the forward pass.
  Tensor noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const override;

  std::vector<double> training_alpha_bars() const override;
  double              clean_alpha_bar() const override;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

NeuralDenoiser load_weights(std::filesystem::path const &path);

} // namespace sarsgs
