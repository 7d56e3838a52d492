// sapm: command-line front end.
//
//   sapm train       --out DIR [--config FILE] [--seed N] [--lambda L] [--iterations N]
//   sapm compress    IN.ppm --model CKPT --out OUT.sapm
//   sapm decompress  IN.sapm --model CKPT --out OUT.ppm
//   sapm eval        REF.ppm DECODED.ppm [--stream IN.sapm]
//   sapm energy      [--mode paper|full] [--config FILE] [--height H --width W] [--out CSV]
//   sapm stats       --model CKPT --out DIR [--channels LIST] [--images N] [--size S]
//   sapm rd-curve    DIR --out CSV [--images N] [--size S]
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sapm/bytes.hpp"
#include "sapm/codec.hpp"
#include "sapm/energy.hpp"
#include "sapm/errors.hpp"
#include "sapm/latent_stats.hpp"
#include "sapm/trainer.hpp"

namespace fs = std::filesystem;
using namespace sapm;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

KeyValues load_config(const std::string& path) {
  return path.empty() ? KeyValues{} : KeyValues::load(path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path);
  f << text;
  if (!f) throw FormatError("write failed: " + path);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string psnr_text(double p) { return p >= kPsnrIdentical ? "inf" : fmt("%.4f", p); }

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, out;
  long long seed = -1;
  double lambda = 0.0;
  std::size_t iterations = 0;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = TrainConfig::from_kv(load_config(a.config));
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.iterations > 0) cfg.stage1_iterations = a.iterations;
  cfg.validate();
  fs::create_directories(a.out);

  if (a.lambda <= 0.0) {
    const PlanResult r = train_plan(cfg, a.out, &std::cerr);
    for (const auto& [lambda, path] : r.checkpoints) std::cout << lambda << "\t" << path << "\n";
    if (r.diverged) {
      std::cerr << "sapm: training diverged: " << r.diagnostic << "\n";
      return kExitNumeric;
    }
    return kExitOk;
  }

  // Single lambda from scratch.
  ModelConfig mc = cfg.model;
  mc.lambda = a.lambda;
  mc.seed = cfg.seed;
  Model model = Model::init(mc);
  const Schedule s = stage1_schedule(cfg, a.lambda);
  const Dataset data = make_dataset(cfg);
  std::ofstream log(fs::path(a.out) / "train_log.jsonl", std::ios::binary);
  const TrainOutcome o =
      train_model(model, s, data, [&](const LogRecord& r) { log << to_json(r) << "\n"; });
  if (o.diverged) {
    std::cerr << "sapm: training diverged: " << o.diagnostic << "\n";
    return kExitNumeric;
  }
  const std::string path = (fs::path(a.out) / checkpoint_name(a.lambda)).string();
  save_checkpoint(model, path);
  std::cout << a.lambda << "\t" << path << "\n";
  return kExitOk;
}

int run_compress(const std::string& in, const std::string& ckpt, const std::string& out) {
  Model model = load_checkpoint(ckpt);
  const Image img = read_ppm(in);
  const CompressResult r = compress(img, model);
  const auto bytes = r.stream.serialize();
  write_file(out, bytes);
  std::cout << "bytes " << bytes.size() << " bpp " << fmt("%.6f", bits_per_pixel(r.stream)) << "\n";
  return kExitOk;
}

int run_decompress(const std::string& in, const std::string& ckpt, const std::string& out) {
  Model model = load_checkpoint(ckpt);
  const Bitstream s = Bitstream::parse(read_file(in));
  const DecompressResult r = decompress(s, model);
  write_ppm(r.image, out);
  std::cout << "wrote " << out << " (" << r.image.width << "x" << r.image.height << ")\n";
  return kExitOk;
}

int run_eval(const std::string& ref, const std::string& decoded, const std::string& stream) {
  const Image a = read_ppm(ref), b = read_ppm(decoded);
  if (a.width != b.width || a.height != b.height) throw ShapeError("images differ in size");
  std::cout << "metric\tvalue\n";
  if (!stream.empty())
    std::cout << "bpp\t" << fmt("%.6f", bits_per_pixel(Bitstream::parse(read_file(stream)))) << "\n";
  std::cout << "psnr\t" << psnr_text(psnr(a, b)) << "\n";
  const MsSsim m = ms_ssim(a, b);
  std::cout << "ms_ssim\t" << fmt("%.6f", m.value) << "\n";
  std::cout << "ms_ssim_scales\t" << m.scales << "\n";
  return kExitOk;
}

int run_energy(const std::string& mode_name, const std::string& config, std::size_t height,
               std::size_t width, const std::string& out) {
  EnergyMode mode;
  if (mode_name == "paper")
    mode = EnergyMode::kPaper;
  else if (mode_name == "full")
    mode = EnergyMode::kFull;
  else
    throw UsageError("--mode must be paper or full");
  const ModelConfig mc = ModelConfig::from_kv(load_config(config));
  const CostModel cost;
  const double conv = unit_energy(LayerKind::kConv, cost), sapm = unit_energy(LayerKind::kSapmE, cost);
  std::cout << "unit energy per slot: conv " << fmt("%.2f", conv) << " pJ, SAPM " << fmt("%.2f", sapm)
            << " pJ, ratio " << fmt("%.3f", conv / sapm) << "\n\n";
  const EnergyReport r = energy_report(describe_model(mc, height, width), mode, cost);
  std::cout << r.table();
  if (!out.empty()) write_text(out, r.csv());
  return kExitOk;
}

std::vector<std::size_t> parse_channels(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError("bad channel list entry '" + item + "'");
    out.push_back(v);
  }
  return out;
}

int run_stats(const std::string& ckpt, const std::string& out, const std::string& channels,
              std::size_t images, std::size_t size, bool discrete) {
  Model model = load_checkpoint(ckpt);
  const auto reports = analyze_latents(model, heldout_images(images, size), parse_channels(channels), discrete);
  fs::create_directories(out);
  write_text((fs::path(out) / "summary.csv").string(), summary_csv(reports));
  for (const auto& r : reports)
    write_text((fs::path(out) / ("channel_" + std::to_string(r.channel) + ".csv")).string(), plot_csv(r));
  std::cout << "channels " << reports.size() << " laplace_winner_fraction "
            << fmt("%.4f", laplace_winner_fraction(reports)) << "\n";
  return kExitOk;
}

int run_rd_curve(const std::string& dir, const std::string& out, std::size_t images, std::size_t size) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
  if (files.empty()) throw FormatError("no .ckpt files in " + dir);
  const std::vector<Image> set = heldout_images(images, size);

  struct Row {
    double lambda, bpp, psnr, ms_ssim;
  };
  std::vector<Row> rows;
  for (const auto& f : files) {
    Model model = load_checkpoint(f.string());
    Row row{model.config.lambda, 0, 0, 0};
    for (const Image& img : set) {
      const CompressResult c = compress(img, model);
      const DecompressResult d = decompress(c.stream, model);
      row.bpp += bits_per_pixel(c.stream);
      row.psnr += psnr(img, d.image);
      row.ms_ssim += ms_ssim(img, d.image).value;
    }
    const double n = static_cast<double>(set.size());
    row.bpp /= n;
    row.psnr /= n;
    row.ms_ssim /= n;
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.lambda < b.lambda; });

  std::string csv = "lambda,bpp,psnr,ms_ssim\n";
  for (const Row& r : rows)
    csv += format_double(r.lambda) + "," + fmt("%.6f", r.bpp) + "," + fmt("%.4f", r.psnr) + "," +
           fmt("%.6f", r.ms_ssim) + "\n";
  write_text(out, csv);
  std::cout << csv;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiplication-reduced learned image codec"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train models (two-stage plan, or one lambda)");
  train->add_option("--config", ta.config, "Training config file");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--seed", ta.seed, "Override the config seed");
  train->add_option("--lambda", ta.lambda, "Train only this lambda from scratch");
  train->add_option("--iterations", ta.iterations, "Override stage-1 iterations");

  std::string c_in, c_model, c_out;
  auto* comp = app.add_subcommand("compress", "PPM image to bitstream");
  comp->add_option("input", c_in)->required();
  comp->add_option("--model", c_model, "Checkpoint")->required();
  comp->add_option("--out", c_out)->required();

  std::string d_in, d_model, d_out;
  auto* decomp = app.add_subcommand("decompress", "Bitstream to PPM image");
  decomp->add_option("input", d_in)->required();
  decomp->add_option("--model", d_model, "Checkpoint")->required();
  decomp->add_option("--out", d_out)->required();

  std::string e_ref, e_dec, e_stream;
  auto* eval = app.add_subcommand("eval", "bpp, PSNR and MS-SSIM of a decoded image");
  eval->add_option("reference", e_ref)->required();
  eval->add_option("decoded", e_dec)->required();
  eval->add_option("--stream", e_stream, "Bitstream, for bpp");

  std::string n_mode = "paper", n_config, n_out;
  std::size_t n_h = 64, n_w = 64;
  auto* energy = app.add_subcommand("energy", "Energy report");
  energy->add_option("--mode", n_mode, "paper or full");
  energy->add_option("--config", n_config, "Model config file");
  energy->add_option("--height", n_h);
  energy->add_option("--width", n_w);
  energy->add_option("--out", n_out, "CSV output");

  std::string s_model, s_out, s_channels;
  std::size_t s_images = 8, s_size = 128;
  bool s_discrete = false;
  auto* stats = app.add_subcommand("stats", "Gaussian vs Laplace fits of latent channels");
  stats->add_option("--model", s_model, "Checkpoint")->required();
  stats->add_option("--out", s_out, "Output directory")->required();
  stats->add_option("--channels", s_channels, "Comma-separated channel list (default all)");
  stats->add_option("--images", s_images);
  stats->add_option("--size", s_size);
  stats->add_flag("--discrete", s_discrete, "Fit rounded latents by bin mass");

  std::string r_dir, r_out;
  std::size_t r_images = 8, r_size = 128;
  auto* rd = app.add_subcommand("rd-curve", "Per-lambda bpp, PSNR, MS-SSIM over a checkpoint directory");
  rd->add_option("dir", r_dir)->required();
  rd->add_option("--out", r_out, "CSV output")->required();
  rd->add_option("--images", r_images);
  rd->add_option("--size", r_size);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return run_train(ta);
    if (*comp) return run_compress(c_in, c_model, c_out);
    if (*decomp) return run_decompress(d_in, d_model, d_out);
    if (*eval) return run_eval(e_ref, e_dec, e_stream);
    if (*energy) return run_energy(n_mode, n_config, n_h, n_w, n_out);
    if (*stats) return run_stats(s_model, s_out, s_channels, s_images, s_size, s_discrete);
    if (*rd) return run_rd_curve(r_dir, r_out, r_images, r_size);
  } catch (const NumericError& e) {
    std::cerr << "sapm: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ShapeError& e) {
    std::cerr << "sapm: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "sapm: " << e.what() << "\n";
    return kExitData;
  } catch (const DomainError& e) {
    std::cerr << "sapm: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "sapm: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "sapm: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
