#pragma once

// Rate-distortion training.
//
// Loss per batch: L = lambda * MSE(x_hat, x) + (bits(y~) + bits(z~)) / pixels,
// with x in [0, 1] and y~, z~ the latents plus uniform noise. Adam updates all
// parameters; adder filter gradients are rescaled to eta * sqrt(numel) before
// the global clip.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sapm/image.hpp"
#include "sapm/model.hpp"
#include "sapm/rng.hpp"

namespace sapm {

class Dataset {
 public:
  // Every .ppm file in `dir`, in sorted path order.
  static Dataset from_directory(const std::string& dir);
  // `count` synthetic images of the given size; image i uses mix_seed(seed, i).
  static Dataset synthetic(std::size_t count, std::size_t size, std::uint64_t seed);

  std::size_t size() const { return images_.size(); }
  const Image& image(std::size_t i) const { return images_[i]; }
  // Batch of random crops; positions depend only on (seed, iteration).
  Tensor batch(std::size_t batch, std::size_t crop, std::uint64_t seed, std::uint64_t iteration) const;

 private:
  std::vector<Image> images_;
};

// Held-out evaluation images (disjoint seed stream from Dataset::synthetic).
std::vector<Image> heldout_images(std::size_t count, std::size_t size);

struct RdTerms {
  Tensor loss;  // scalar, differentiable
  double distortion = 0.0, rate_y = 0.0, rate_z = 0.0;  // rates in bits per pixel
};

RdTerms rd_loss(Model& model, const Tensor& batch, double lambda, QuantMode quant, Rng& rng,
                IdMode id_mode = IdMode::kTrain);

struct Schedule {
  double lambda = 512.0;
  std::size_t iterations = 20000;
  double lr = 1e-4;
  // From this iteration on the learning rate is lr_late; 0 keeps lr throughout.
  std::size_t lr_drop_at = 0;
  double lr_late = 1e-5;
  // From this iteration on ID runs on its running statistics, which stay
  // fixed, so the rest of the network adapts to what inference will use.
  // With small batches the per-batch whitening differs a lot from the
  // running estimate, and a model never trained on the latter decodes poorly.
  static constexpr std::size_t kNever = static_cast<std::size_t>(-1);
  std::size_t freeze_stats_at = kNever;
  std::size_t batch = 4;
  std::size_t crop = 64;
  double adder_eta = 0.1;
  double clip_norm = 10.0;
  std::uint64_t seed = 1;
  std::size_t divergence_window = 500;
  double divergence_factor = 10.0;
};

struct LogRecord {
  std::size_t iteration = 0;
  double lambda = 0.0, lr = 0.0, loss = 0.0, distortion = 0.0, rate_y = 0.0, rate_z = 0.0;
  bool skipped = false;  // non-finite loss or gradient; no update applied
};

std::string to_json(const LogRecord& r);

struct TrainOutcome {
  std::vector<LogRecord> log;
  bool diverged = false;
  std::string diagnostic;
};

// Trains `model` in place. `on_record` sees each record as it is produced.
TrainOutcome train_model(Model& model, const Schedule& schedule, const Dataset& data,
                         const std::function<void(const LogRecord&)>& on_record = {});

struct TrainConfig {
  ModelConfig model;
  std::vector<double> lambdas_low{16, 32, 64, 128, 256, 512};
  std::vector<double> lambdas_high{1024, 2048, 4096};
  std::size_t batch = 4;
  std::size_t crop = 64;
  std::size_t stage1_iterations = 20000;
  std::size_t finetune_iterations = 5000;
  double lr = 1e-4;
  double lr_finetune = 1e-5;
  // Fraction of stage 1 run at lr before dropping to lr_finetune.
  double lr_drop_fraction = 0.9;
  // Fraction of stage 1 run before ID statistics freeze; fine-tuning keeps
  // them frozen throughout.
  double freeze_stats_fraction = 0.85;
  double adder_eta = 0.1;
  double clip_norm = 10.0;
  std::uint64_t seed = 1;
  std::string dataset;  // directory of PPM files; empty selects synthetic data
  std::size_t synthetic_count = 512;
  std::size_t synthetic_size = 128;

  void validate() const;
  static TrainConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
};

Dataset make_dataset(const TrainConfig& config);

// Stage-1 (from scratch) schedule for one lambda.
Schedule stage1_schedule(const TrainConfig& config, double lambda);

// Two-stage plan: the largest lambda of each set from scratch, then every
// other lambda fine-tuned from its set's stage-1 checkpoint. Writes
// lambda_<value>.ckpt and train_log.jsonl into out_dir.
struct PlanResult {
  std::vector<std::pair<double, std::string>> checkpoints;
  bool diverged = false;
  std::string diagnostic;
};
PlanResult train_plan(const TrainConfig& config, const std::string& out_dir, std::ostream* progress);

std::string checkpoint_name(double lambda);

}  // namespace sapm
