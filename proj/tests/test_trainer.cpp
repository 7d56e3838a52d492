#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sapm/errors.hpp"
#include "sapm/trainer.hpp"

using namespace sapm;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.channels = 8;
  c.latent_channels = 8;
  return c;
}

Schedule short_schedule(std::size_t iterations) {
  Schedule s;
  s.iterations = iterations;
  s.batch = 1;
  s.crop = 32;
  return s;
}

double mean_loss(const std::vector<LogRecord>& log, std::size_t from, std::size_t to) {
  double acc = 0;
  for (std::size_t i = from; i < to; ++i) acc += log[i].loss;
  return acc / static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("dataset") {
  const Dataset d = Dataset::synthetic(3, 64, 5);
  CHECK(d.size() == 3);
  const Tensor a = d.batch(2, 32, 1, 7), b = d.batch(2, 32, 1, 7);
  CHECK(a.shape() == Shape{2, 3, 32, 32});
  CHECK(std::vector<double>(a.data().begin(), a.data().end()) == std::vector<double>(b.data().begin(), b.data().end()));
  for (double v : a.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(heldout_images(2, 32)[0] == heldout_images(2, 32)[0]);
  CHECK_FALSE(heldout_images(1, 64)[0] == d.image(0));
}

TEST_CASE("rate-distortion loss") {
  Model m = Model::init(small_model());
  const Tensor x = Dataset::synthetic(1, 64, 3).batch(1, 64, 1, 0);
  Rng rng(91);
  const RdTerms zero = rd_loss(m, x, 0.0, QuantMode::kNoise, rng);
  CHECK(zero.loss.item() == doctest::Approx(zero.rate_y + zero.rate_z).epsilon(1e-12));
  Rng rng2(91);
  const RdTerms t = rd_loss(m, x, 100.0, QuantMode::kNoise, rng2);
  CHECK(std::isfinite(t.loss.item()));
  CHECK(t.loss.item() > 0);
  CHECK(t.loss.item() == doctest::Approx(100.0 * t.distortion + t.rate_y + t.rate_z).epsilon(1e-12));
}

TEST_CASE("overfitting a single image reduces the loss") {
  Model m = Model::init(ModelConfig{});
  const Dataset one = Dataset::synthetic(1, 64, 11);
  Schedule s;
  s.lambda = 512;
  s.iterations = 200;
  s.batch = 1;
  s.crop = 64;
  const TrainOutcome out = train_model(m, s, one);
  REQUIRE(out.log.size() == 200);
  CHECK_FALSE(out.diverged);
  for (const auto& r : out.log) CHECK_FALSE(r.skipped);
  const double early = mean_loss(out.log, 10, 20), late = mean_loss(out.log, 190, 200);
  CAPTURE(early);
  CAPTURE(late);
  CHECK(late <= 0.7 * early);
}

TEST_CASE("training is deterministic") {
  const Dataset data = Dataset::synthetic(2, 64, 12);
  auto run = [&] {
    Model m = Model::init(small_model());
    const TrainOutcome out = train_model(m, short_schedule(5), data);
    std::vector<double> losses;
    for (const auto& r : out.log) losses.push_back(r.loss);
    return std::make_pair(losses, serialize_checkpoint(m));
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("frozen statistics stay fixed") {
  const Dataset data = Dataset::synthetic(2, 64, 14);
  auto running = [](const Model& m) {
    std::vector<double> v;
    for (const auto& [name, t] : m.named_state())
      if (name.find("running") != std::string::npos) v.insert(v.end(), t.data().begin(), t.data().end());
    return v;
  };
  Model m = Model::init(small_model());
  const std::vector<double> before = running(m);
  Schedule s = short_schedule(4);
  s.freeze_stats_at = 2;
  train_model(m, s, data);
  const std::vector<double> mid = running(m);
  CHECK(mid != before);
  s.freeze_stats_at = 0;
  const auto w0 = serialize_checkpoint(m);
  train_model(m, s, data);
  CHECK(running(m) == mid);
  CHECK(serialize_checkpoint(m) != w0);
}

TEST_CASE("divergence detection") {
  Model m = Model::init(small_model());
  Schedule s = short_schedule(20);
  s.divergence_factor = 1e-6;
  s.divergence_window = 3;
  const TrainOutcome out = train_model(m, s, Dataset::synthetic(1, 64, 13));
  CHECK(out.diverged);
  CHECK(out.log.size() == 3);
  CHECK(out.diagnostic.find("iteration 2") != std::string::npos);
}

TEST_CASE("log records") {
  LogRecord r;
  r.iteration = 4;
  r.loss = 1.5;
  const std::string j = to_json(r);
  CHECK(j.front() == '{');
  CHECK(j.find("\"iter\":4") != std::string::npos);
  CHECK(j.find("\"skipped\":false") != std::string::npos);
  CHECK(j.find('\n') == std::string::npos);
}

TEST_CASE("train config") {
  TrainConfig c;
  c.lambdas_low = {8, 16};
  c.crop = 96;
  c.seed = 5;
  const TrainConfig back = TrainConfig::from_kv(c.to_kv());
  CHECK(back.to_kv().str() == c.to_kv().str());
  CHECK(back.model.seed == 5);
  CHECK_THROWS_AS(TrainConfig::from_kv(KeyValues::parse("no_such_key = 1\n")), FormatError);
  TrainConfig bad = c;
  bad.crop = 48;
  CHECK_THROWS(bad.validate());
  TrainConfig bad_freeze = c;
  bad_freeze.freeze_stats_fraction = 1.5;
  CHECK_THROWS(bad_freeze.validate());

  const Schedule s = stage1_schedule(c, 16);
  CHECK(s.lambda == 16);
  CHECK(s.lr_drop_at == static_cast<std::size_t>(0.9 * static_cast<double>(c.stage1_iterations)));
  CHECK(s.freeze_stats_at == static_cast<std::size_t>(0.85 * static_cast<double>(c.stage1_iterations)));
  CHECK(checkpoint_name(16) != checkpoint_name(32));
}

TEST_CASE("two-stage plan") {
  TrainConfig c;
  c.model = small_model();
  c.lambdas_low = {16, 32};
  c.lambdas_high = {};
  c.batch = 1;
  c.crop = 32;
  c.stage1_iterations = 3;
  c.finetune_iterations = 2;
  c.synthetic_count = 2;
  c.synthetic_size = 64;
  const auto dir = std::filesystem::temp_directory_path() / "sapm_test_plan";
  std::filesystem::remove_all(dir);
  std::ostringstream progress;
  const PlanResult r = train_plan(c, dir.string(), &progress);
  CHECK_FALSE(r.diverged);
  REQUIRE(r.checkpoints.size() == 2);
  for (const auto& [lambda, path] : r.checkpoints) {
    CHECK(std::filesystem::exists(path));
    CHECK(load_checkpoint(path).config.lambda == lambda);
  }
  std::ifstream log(dir / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  CHECK(lines == 3 + 2);
  std::filesystem::remove_all(dir);
}
