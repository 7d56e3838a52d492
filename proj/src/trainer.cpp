#include "sapm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sapm/errors.hpp"

namespace sapm {

namespace fs = std::filesystem;

Dataset Dataset::from_directory(const std::string& dir) {
  std::vector<fs::path> paths;
  if (!fs::is_directory(dir)) throw FormatError("dataset directory not found: " + dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  Dataset d;
  for (const auto& p : paths) d.images_.push_back(read_ppm(p.string()));
  if (d.images_.empty()) throw FormatError("no .ppm images in " + dir);
  return d;
}

Dataset Dataset::synthetic(std::size_t count, std::size_t size, std::uint64_t seed) {
  Dataset d;
  for (std::size_t i = 0; i < count; ++i) d.images_.push_back(synthetic_image(size, size, mix_seed(seed, i)));
  return d;
}

std::vector<Image> heldout_images(std::size_t count, std::size_t size) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(synthetic_image(size, size, mix_seed(0x7e57'0000'0000ULL, i)));
  return out;
}

Tensor Dataset::batch(std::size_t batch, std::size_t crop, std::uint64_t seed,
                      std::uint64_t iteration) const {
  Rng rng(mix_seed(seed, iteration));
  std::vector<Image> crops;
  for (std::size_t b = 0; b < batch; ++b) {
    const Image& img = images_[rng.below(images_.size())];
    if (img.width < crop || img.height < crop) throw ShapeError("dataset image smaller than the crop");
    const std::size_t x0 = rng.below(img.width - crop + 1), y0 = rng.below(img.height - crop + 1);
    crops.push_back(sapm::crop(img, x0, y0, crop, crop));
  }
  return images_to_tensor(crops, crop, crop);
}

RdTerms rd_loss(Model& model, const Tensor& batch, double lambda, QuantMode quant, Rng& rng,
                IdMode id_mode) {
  const Shape& s = batch.shape();
  const double pixels = static_cast<double>(s.n() * s.h() * s.w());
  const Tensor y = model.encode(batch, id_mode);
  const Tensor z = model.hyper_encode(y);
  const Tensor z_t = quantize_latent(z, quant, rng);
  const Tensor y_t = quantize_latent(y, quant, rng);
  const LmmParams lmm = model.hyper_decode(z_t);
  const Tensor bits_y = rate_bits(lmm_likelihood(y_t, lmm));
  const Tensor bits_z = rate_bits(factorized_likelihood(z_t, model.prior));
  const Tensor x_hat = model.decode(y_t, id_mode);
  const Tensor d = mse(x_hat, batch);
  RdTerms r;
  r.loss = add(mul(d, lambda), mul(add(bits_y, bits_z), 1.0 / pixels));
  r.distortion = d.item();
  r.rate_y = bits_y.item() / pixels;
  r.rate_z = bits_z.item() / pixels;
  return r;
}

std::string to_json(const LogRecord& r) {
  std::ostringstream o;
  o << "{\"iter\":" << r.iteration << ",\"lambda\":" << format_double(r.lambda)
    << ",\"lr\":" << format_double(r.lr) << ",\"loss\":" << format_double(r.loss)
    << ",\"D\":" << format_double(r.distortion) << ",\"R_y\":" << format_double(r.rate_y)
    << ",\"R_z\":" << format_double(r.rate_z) << ",\"skipped\":" << (r.skipped ? "true" : "false")
    << "}";
  return o.str();
}

TrainOutcome train_model(Model& model, const Schedule& sc, const Dataset& data,
                         const std::function<void(const LogRecord&)>& on_record) {
  if (sc.crop % model.config.downsample() != 0)
    throw std::invalid_argument("crop size must be a multiple of " + std::to_string(model.config.downsample()));
  std::vector<Tensor> params = model.parameters();
  const std::vector<Tensor> adders = model.adder_filters();
  Adam adam(params, AdamOptions{sc.lr});
  TrainOutcome out;
  std::optional<double> initial;
  std::size_t above = 0;

  for (std::size_t it = 0; it < sc.iterations; ++it) {
    const double lr = sc.lr_drop_at > 0 && it >= sc.lr_drop_at ? sc.lr_late : sc.lr;
    adam.set_lr(lr);
    LogRecord rec;
    rec.iteration = it;
    rec.lambda = sc.lambda;
    rec.lr = lr;

    const Tensor x = data.batch(sc.batch, sc.crop, sc.seed, it);
    Rng noise(mix_seed(sc.seed ^ 0x6e6f697365ULL, it));
    for (auto& p : params) p.zero_grad();
    try {
      Tape tape;
      TapeScope scope(tape);
      const IdMode mode = it >= sc.freeze_stats_at ? IdMode::kInfer : IdMode::kTrain;
      const RdTerms t = rd_loss(model, x, sc.lambda, QuantMode::kNoise, noise, mode);
      rec.loss = t.loss.item();
      rec.distortion = t.distortion;
      rec.rate_y = t.rate_y;
      rec.rate_z = t.rate_z;
      if (!std::isfinite(rec.loss)) throw NumericError("non-finite loss");
      tape.backward(t.loss);
      for (Tensor a : adders)
        if (a.has_grad()) adaptive_gradient_scale(a.mutable_grad(), sc.adder_eta);
      clip_grad_norm(params, sc.clip_norm);
      rec.skipped = !adam.step();
    } catch (const NumericError&) {
      rec.skipped = true;
    }
    if (on_record) on_record(rec);
    out.log.push_back(rec);

    if (!rec.skipped || std::isfinite(rec.loss)) {
      if (!initial) initial = rec.loss;
      above = rec.loss > sc.divergence_factor * *initial ? above + 1 : 0;
    } else {
      ++above;
    }
    if (above >= sc.divergence_window) {
      out.diverged = true;
      out.diagnostic = "loss above " + format_double(sc.divergence_factor) + "x its initial value " +
                       format_double(*initial) + " for " + std::to_string(above) +
                       " consecutive iterations (stopped at iteration " + std::to_string(it) + ")";
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  if (lambdas_low.empty() && lambdas_high.empty()) throw std::invalid_argument("no lambda values");
  if (!(lr_finetune < lr)) throw std::invalid_argument("fine-tune lr must be below the stage-1 lr");
  if (crop % model.downsample() != 0)
    throw std::invalid_argument("crop must be a multiple of " + std::to_string(model.downsample()));
  if (batch == 0) throw std::invalid_argument("batch must be positive");
  if (!(freeze_stats_fraction >= 0.0 && freeze_stats_fraction <= 1.0))
    throw std::invalid_argument("freeze_stats_fraction must be in [0, 1]");
}

namespace {

const std::vector<std::string_view> kTrainKeys = {
    "lambdas_low", "lambdas_high", "batch", "crop", "stage1_iterations", "finetune_iterations",
    "lr", "lr_finetune", "lr_drop_fraction", "freeze_stats_fraction", "adder_eta", "clip_norm", "seed", "dataset",
    "synthetic_count", "synthetic_size", "channels", "latent_channels", "levels", "mixtures",
    "kernel", "lambda", "p_min", "p_max", "leaky_slope"};

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s;
}

}  // namespace

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  kv.require_known(kTrainKeys);
  TrainConfig c;
  c.model = ModelConfig::from_kv(kv);
  c.lambdas_low = kv.get_list("lambdas_low", c.lambdas_low);
  c.lambdas_high = kv.get_list("lambdas_high", c.lambdas_high);
  c.batch = static_cast<std::size_t>(kv.get_int("batch", static_cast<std::int64_t>(c.batch)));
  c.crop = static_cast<std::size_t>(kv.get_int("crop", static_cast<std::int64_t>(c.crop)));
  c.stage1_iterations = static_cast<std::size_t>(kv.get_int("stage1_iterations", static_cast<std::int64_t>(c.stage1_iterations)));
  c.finetune_iterations = static_cast<std::size_t>(kv.get_int("finetune_iterations", static_cast<std::int64_t>(c.finetune_iterations)));
  c.lr = kv.get_double("lr", c.lr);
  c.lr_finetune = kv.get_double("lr_finetune", c.lr_finetune);
  c.lr_drop_fraction = kv.get_double("lr_drop_fraction", c.lr_drop_fraction);
  c.freeze_stats_fraction = kv.get_double("freeze_stats_fraction", c.freeze_stats_fraction);
  c.adder_eta = kv.get_double("adder_eta", c.adder_eta);
  c.clip_norm = kv.get_double("clip_norm", c.clip_norm);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.model.seed = c.seed;
  c.dataset = kv.get_string("dataset", c.dataset);
  c.synthetic_count = static_cast<std::size_t>(kv.get_int("synthetic_count", static_cast<std::int64_t>(c.synthetic_count)));
  c.synthetic_size = static_cast<std::size_t>(kv.get_int("synthetic_size", static_cast<std::int64_t>(c.synthetic_size)));
  return c;
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv = model.to_kv();
  kv.set("lambdas_low", join(lambdas_low));
  kv.set("lambdas_high", join(lambdas_high));
  kv.set("batch", std::to_string(batch));
  kv.set("crop", std::to_string(crop));
  kv.set("stage1_iterations", std::to_string(stage1_iterations));
  kv.set("finetune_iterations", std::to_string(finetune_iterations));
  kv.set("lr", format_double(lr));
  kv.set("lr_finetune", format_double(lr_finetune));
  kv.set("lr_drop_fraction", format_double(lr_drop_fraction));
  kv.set("freeze_stats_fraction", format_double(freeze_stats_fraction));
  kv.set("adder_eta", format_double(adder_eta));
  kv.set("clip_norm", format_double(clip_norm));
  kv.set("seed", std::to_string(seed));
  kv.set("dataset", dataset);
  kv.set("synthetic_count", std::to_string(synthetic_count));
  kv.set("synthetic_size", std::to_string(synthetic_size));
  return kv;
}

Dataset make_dataset(const TrainConfig& config) {
  return config.dataset.empty()
             ? Dataset::synthetic(config.synthetic_count, config.synthetic_size, config.seed)
             : Dataset::from_directory(config.dataset);
}

std::string checkpoint_name(double lambda) { return "lambda_" + format_double(lambda) + ".ckpt"; }

Schedule stage1_schedule(const TrainConfig& config, double lambda) {
  Schedule sc;
  sc.lambda = lambda;
  sc.iterations = config.stage1_iterations;
  sc.lr = config.lr;
  sc.lr_late = config.lr_finetune;
  sc.lr_drop_at = static_cast<std::size_t>(config.lr_drop_fraction * config.stage1_iterations);
  sc.freeze_stats_at = static_cast<std::size_t>(config.freeze_stats_fraction * config.stage1_iterations);
  sc.batch = config.batch;
  sc.crop = config.crop;
  sc.adder_eta = config.adder_eta;
  sc.clip_norm = config.clip_norm;
  sc.seed = config.seed;
  return sc;
}

PlanResult train_plan(const TrainConfig& config, const std::string& out_dir, std::ostream* progress) {
  config.validate();
  fs::create_directories(out_dir);
  const Dataset data = make_dataset(config);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl", std::ios::trunc);
  if (!log) throw FormatError("cannot write training log in " + out_dir);
  PlanResult result;

  auto run = [&](Model& model, Schedule sc) {
    const TrainOutcome o = train_model(model, sc, data, [&](const LogRecord& r) {
      log << to_json(r) << '\n';
      if (progress && (r.iteration % 500 == 0 || r.iteration + 1 == sc.iterations))
        *progress << "lambda " << sc.lambda << " iter " << r.iteration << " loss " << r.loss << '\n';
    });
    if (o.diverged) {
      result.diverged = true;
      result.diagnostic = "lambda " + format_double(sc.lambda) + ": " + o.diagnostic;
    }
    const std::string path = (fs::path(out_dir) / checkpoint_name(sc.lambda)).string();
    save_checkpoint(model, path);
    result.checkpoints.emplace_back(sc.lambda, path);
    return !o.diverged;
  };

  for (const auto* set : {&config.lambdas_low, &config.lambdas_high}) {
    if (set->empty()) continue;
    const double top = *std::max_element(set->begin(), set->end());
    ModelConfig mc = config.model;
    mc.lambda = top;
    Model base = Model::init(mc);
    const Schedule sc = stage1_schedule(config, top);
    if (!run(base, sc)) return result;
    const std::string base_path = result.checkpoints.back().second;

    for (double lambda : *set) {
      if (lambda == top) continue;
      Model ft = load_checkpoint(base_path);
      ft.config.lambda = lambda;
      Schedule fsc = sc;
      fsc.lambda = lambda;
      fsc.iterations = config.finetune_iterations;
      fsc.lr = config.lr_finetune;
      fsc.lr_drop_at = 0;
      fsc.freeze_stats_at = 0;
      fsc.seed = mix_seed(config.seed, static_cast<std::uint64_t>(lambda));
      if (!run(ft, fsc)) return result;
    }
  }
  return result;
}

}  // namespace sapm
