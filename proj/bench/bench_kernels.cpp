// Fast (im2col / tiled, OpenMP) kernels against the serial reference loops on
// the layer shapes of the default model.
#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "sapm/kernels.hpp"
#include "sapm/rng.hpp"

namespace k = sapm::kernels;

namespace {

struct Layer {
  const char* name;
  k::ConvGeometry g;
};

// sapm_d_*: the shift branch's shape (Cout r^2 outputs); sapm_d_adder_*: the
// adder branch's (Cout outputs).
const std::vector<Layer>& layers() {
  static const std::vector<Layer> v = {
      {"sapm_e_64px", {1, 32, 32, 32, 32, 5, 2, 2}},
      {"sapm_d_64px", {1, 32, 16, 16, 128, 5, 1, 2}},
      {"sapm_d_adder_64px", {1, 32, 16, 16, 32, 5, 1, 2}},
      {"sapm_d_64px_b4", {4, 32, 16, 16, 128, 5, 1, 2}},
      {"hyper_1x1ish", {1, 32, 8, 8, 96, 3, 1, 1}},
  };
  return v;
}

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  sapm::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform() * 2 - 1;
  return v;
}

enum class Op { kConvForward, kConvBackwardWeight, kAdderForward, kAdderBackwardInput, kAdderBackwardFilter };

template <bool Fast>
void run(benchmark::State& state, const k::ConvGeometry& g, Op op) {
  const auto x = random_values(g.in_size(), 1);
  const auto w = random_values(g.weight_size(), 2);
  const auto gy = random_values(g.out_size(), 3);
  std::vector<double> y(g.out_size()), gx(g.in_size()), gw(g.weight_size());
  for (auto _ : state) {
    switch (op) {
      case Op::kConvForward:
        Fast ? k::conv_forward(g, x, w, y) : k::reference::conv_forward(g, x, w, y);
        break;
      case Op::kConvBackwardWeight:
        Fast ? k::conv_backward_weight(g, x, gy, gw) : k::reference::conv_backward_weight(g, x, gy, gw);
        break;
      case Op::kAdderForward:
        Fast ? k::adder_forward(g, x, w, y) : k::reference::adder_forward(g, x, w, y);
        break;
      case Op::kAdderBackwardInput:
        Fast ? k::adder_backward_input(g, x, w, gy, gx) : k::reference::adder_backward_input(g, x, w, gy, gx);
        break;
      case Op::kAdderBackwardFilter:
        Fast ? k::adder_backward_filter(g, x, w, gy, gw) : k::reference::adder_backward_filter(g, x, w, gy, gw);
        break;
    }
    benchmark::ClobberMemory();
  }
  state.counters["slots/s"] = benchmark::Counter(
      static_cast<double>(g.out_size() * g.patch()), benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

int main(int argc, char** argv) {
  const std::pair<const char*, Op> ops[] = {{"conv_fwd", Op::kConvForward},
                                            {"conv_bwd_w", Op::kConvBackwardWeight},
                                            {"adder_fwd", Op::kAdderForward},
                                            {"adder_bwd_x", Op::kAdderBackwardInput},
                                            {"adder_bwd_f", Op::kAdderBackwardFilter}};
  for (const Layer& l : layers())
    for (const auto& [op_name, op] : ops) {
      const std::string base = std::string(op_name) + "/" + l.name;
      benchmark::RegisterBenchmark((base + "/fast").c_str(), run<true>, l.g, op)->Unit(benchmark::kMicrosecond);
      benchmark::RegisterBenchmark((base + "/reference").c_str(), run<false>, l.g, op)->Unit(benchmark::kMicrosecond);
    }
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
