#pragma once

// Operation counting and energy pricing.
//
// A slot is one multiply-accumulate position of a k x k layer:
// slots = k^2 * Cin * Cout * Hout * Wout (for a transposed convolution the
// positions actually computed, k^2 * Cin * Cout * Hin * Win). Paper mode
// prices only these main-branch slots; full mode adds the auxiliary work
// (whitening, pooling, 1x1 shortcuts, branch sums, GDN, biases).
//
// SAPM-D's branches run at the input resolution. Its shift branch has
// k^2 * Cin * Cout r^2 * Hin * Win slots and its adder branch, which ID widens
// afterwards, k^2 * Cin * Cout * Hin * Win; each is priced at its own
// per-slot mix, and the row's slot count is the shift branch's.

#include <cstdint>
#include <string>
#include <vector>

#include "sapm/model.hpp"

namespace sapm {

struct CostModel {
  double mult_fp32 = 3.70;   // pJ
  double add_fp32 = 0.90;
  double add_fix32 = 0.10;
  double shift_fix32 = 0.13;

  void validate() const;
};

enum class LayerKind { kConv, kTransposedConv, kSapmE, kSapmD, kShift, kAdder };
enum class EnergyMode { kPaper, kFull };

const char* to_string(LayerKind kind);
const char* to_string(EnergyMode mode);

struct OpCounts {
  double mults = 0, add_fp32 = 0, add_fix32 = 0, shifts = 0;

  double energy(const CostModel& cost) const;
  OpCounts& operator+=(const OpCounts& o);
};

// Per-slot operation mix of a main branch.
OpCounts unit_ops(LayerKind kind);
double unit_energy(LayerKind kind, const CostModel& cost);

struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::uint64_t k = 1, cin = 1, cout = 1, stride = 1;
  std::uint64_t hin = 1, win = 1;
  bool bias = true;
  // Channels normalized by a GDN/IGDN following the layer (0 for none).
  std::uint64_t gdn_channels = 0;

  std::uint64_t hout() const;
  std::uint64_t wout() const;
};

std::uint64_t slot_count(std::uint64_t k, std::uint64_t cin, std::uint64_t cout, std::uint64_t hout,
                         std::uint64_t wout);
std::uint64_t slot_count(const LayerDesc& layer);
// Adder-branch slots of a SAPM layer (equal to slot_count for SAPM-E).
std::uint64_t adder_slot_count(const LayerDesc& layer);

struct EnergyRow {
  std::string name;
  LayerKind kind;
  std::uint64_t slots = 0;
  OpCounts ops;
  double energy = 0.0;  // pJ
};

struct EnergyReport {
  EnergyMode mode = EnergyMode::kPaper;
  std::vector<EnergyRow> rows;
  OpCounts totals;
  double energy = 0.0;           // pJ, sum over rows
  double baseline_energy = 0.0;  // same network with every SAPM as a plain conv
  double ratio = 0.0;            // baseline_energy / energy

  std::string table() const;
  std::string csv() const;
};

EnergyRow price_layer(const LayerDesc& layer, EnergyMode mode, const CostModel& cost);
EnergyReport energy_report(const std::vector<LayerDesc>& layers, EnergyMode mode,
                           const CostModel& cost = {});

// Encoder, decoder and hyper networks of a model on an h x w input.
std::vector<LayerDesc> describe_model(const ModelConfig& config, std::uint64_t height,
                                      std::uint64_t width);

}  // namespace sapm
