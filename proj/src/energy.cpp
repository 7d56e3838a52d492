#include "sapm/energy.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace sapm {

void CostModel::validate() const {
  if (!(mult_fp32 > 0 && add_fp32 > 0 && add_fix32 > 0 && shift_fix32 > 0))
    throw std::invalid_argument("cost model entries must be positive");
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kTransposedConv: return "tconv";
    case LayerKind::kSapmE: return "sapm-e";
    case LayerKind::kSapmD: return "sapm-d";
    case LayerKind::kShift: return "shift";
    case LayerKind::kAdder: return "adder";
  }
  throw std::invalid_argument("unknown layer kind");
}

const char* to_string(EnergyMode mode) { return mode == EnergyMode::kPaper ? "paper" : "full"; }

double OpCounts::energy(const CostModel& c) const {
  return mults * c.mult_fp32 + add_fp32 * c.add_fp32 + add_fix32 * c.add_fix32 + shifts * c.shift_fix32;
}

OpCounts& OpCounts::operator+=(const OpCounts& o) {
  mults += o.mults;
  add_fp32 += o.add_fp32;
  add_fix32 += o.add_fix32;
  shifts += o.shifts;
  return *this;
}

OpCounts unit_ops(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv:
    case LayerKind::kTransposedConv: return {1, 1, 0, 0};
    case LayerKind::kSapmE:
    case LayerKind::kSapmD: return {0, 2, 1, 1};
    case LayerKind::kShift: return {0, 0, 1, 1};
    case LayerKind::kAdder: return {0, 2, 0, 0};
  }
  throw std::invalid_argument("unknown layer kind");
}

double unit_energy(LayerKind kind, const CostModel& cost) { return unit_ops(kind).energy(cost); }

std::uint64_t LayerDesc::hout() const {
  if (kind == LayerKind::kTransposedConv) return hin * stride;
  if (kind == LayerKind::kSapmD) return hin * stride;
  return (hin + stride - 1) / stride;
}

std::uint64_t LayerDesc::wout() const {
  if (kind == LayerKind::kTransposedConv || kind == LayerKind::kSapmD) return win * stride;
  return (win + stride - 1) / stride;
}

std::uint64_t slot_count(std::uint64_t k, std::uint64_t cin, std::uint64_t cout, std::uint64_t hout,
                         std::uint64_t wout) {
  return k * k * cin * cout * hout * wout;
}

std::uint64_t slot_count(const LayerDesc& l) {
  switch (l.kind) {
    case LayerKind::kTransposedConv: return slot_count(l.k, l.cin, l.cout, l.hin, l.win);
    // The shift branch runs at the input resolution with Cout * r^2 channels.
    case LayerKind::kSapmD: return slot_count(l.k, l.cin, l.cout * l.stride * l.stride, l.hin, l.win);
    default: return slot_count(l.k, l.cin, l.cout, l.hout(), l.wout());
  }
}

std::uint64_t adder_slot_count(const LayerDesc& l) {
  if (l.kind == LayerKind::kSapmD) return slot_count(l.k, l.cin, l.cout, l.hin, l.win);
  return slot_count(l);
}

namespace {

// Folded 1x1 whitening of `cin` channels into `cout` at `pixels` positions:
// a Cout x Cin product and one bias subtraction per output.
OpCounts id_ops(double cin, double cout, double pixels) {
  return {cin * cout * pixels, cin * cout * pixels, 0, 0};
}

// Per position: C squares, C^2 products and C^2 adds for the weighted sum
// (including beta), then a square root and a divide, each priced as a mult.
OpCounts gdn_ops(double c, double pixels) {
  return {(c + c * c + 2 * c) * pixels, c * c * pixels, 0, 0};
}

}  // namespace

EnergyRow price_layer(const LayerDesc& l, EnergyMode mode, const CostModel& cost) {
  EnergyRow row;
  row.name = l.name;
  row.kind = l.kind;
  row.slots = slot_count(l);
  const double slots = static_cast<double>(row.slots);
  const OpCounts u = unit_ops(l.kind);
  row.ops = {u.mults * slots, u.add_fp32 * slots, u.add_fix32 * slots, u.shifts * slots};
  if (l.kind == LayerKind::kSapmD) {
    const OpCounts sh = unit_ops(LayerKind::kShift), ad = unit_ops(LayerKind::kAdder);
    const double adder = static_cast<double>(adder_slot_count(l));
    row.ops = {sh.mults * slots + ad.mults * adder, sh.add_fp32 * slots + ad.add_fp32 * adder,
               sh.add_fix32 * slots + ad.add_fix32 * adder, sh.shifts * slots + ad.shifts * adder};
  }

  if (mode == EnergyMode::kFull) {
    const double out_pix = static_cast<double>(l.hout() * l.wout());
    const double outputs = static_cast<double>(l.cout) * out_pix;
    switch (l.kind) {
      case LayerKind::kConv:
      case LayerKind::kTransposedConv:
        if (l.bias) row.ops.add_fp32 += outputs;
        break;
      case LayerKind::kSapmE: {
        row.ops += id_ops(static_cast<double>(l.cout), static_cast<double>(l.cout), out_pix);
        // Average pool: s^2 - 1 adds and one divide per pooled value.
        const double pooled = static_cast<double>(l.cin) * out_pix;
        row.ops.add_fp32 += static_cast<double>(l.stride * l.stride - 1) * pooled;
        row.ops.mults += pooled;
        row.ops.add_fp32 += 2 * outputs;  // three-way branch sum
        break;
      }
      case LayerKind::kSapmD: {
        const double low_pix = static_cast<double>(l.hin * l.win);
        const double wide = static_cast<double>(l.cout * l.stride * l.stride);
        row.ops += id_ops(static_cast<double>(l.cout), wide, low_pix);
        // 1x1 conv shortcut with bias.
        const double sc = static_cast<double>(l.cin) * wide * low_pix;
        row.ops.mults += sc;
        row.ops.add_fp32 += sc + wide * low_pix;
        row.ops.add_fp32 += 2 * wide * low_pix;
        break;
      }
      case LayerKind::kShift:
      case LayerKind::kAdder:
        break;
    }
    if (l.gdn_channels > 0) row.ops += gdn_ops(static_cast<double>(l.gdn_channels), out_pix);
  }
  row.energy = row.ops.energy(cost);
  return row;
}

EnergyReport energy_report(const std::vector<LayerDesc>& layers, EnergyMode mode, const CostModel& cost) {
  cost.validate();
  EnergyReport r;
  r.mode = mode;
  for (const auto& l : layers) {
    r.rows.push_back(price_layer(l, mode, cost));
    r.totals += r.rows.back().ops;
    r.energy += r.rows.back().energy;
    LayerDesc base = l;
    if (l.kind == LayerKind::kSapmE || l.kind == LayerKind::kShift || l.kind == LayerKind::kAdder) {
      base.kind = LayerKind::kConv;
    } else if (l.kind == LayerKind::kSapmD) {
      // Same-shape plain replacement: a conv to Cout r^2 channels at the
      // input resolution followed by the pixel shuffle.
      base.kind = LayerKind::kConv;
      base.cout = l.cout * l.stride * l.stride;
      base.stride = 1;
      base.gdn_channels = 0;
      const EnergyRow b = price_layer(base, mode, cost);
      r.baseline_energy += b.energy;
      if (l.gdn_channels > 0 && mode == EnergyMode::kFull)
        r.baseline_energy += gdn_ops(static_cast<double>(l.gdn_channels),
                                     static_cast<double>(l.hout() * l.wout())).energy(cost);
      continue;
    }
    r.baseline_energy += price_layer(base, mode, cost).energy;
  }
  r.ratio = r.energy > 0 ? r.baseline_energy / r.energy : 0.0;
  return r;
}

std::string EnergyReport::table() const {
  std::ostringstream o;
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %-7s %14s %14s %14s %14s %14s %16s\n", "layer", "kind",
                "slots", "mults", "add_fp32", "add_fix32", "shifts", "energy_pJ");
  o << line;
  auto emit = [&](const std::string& name, const char* kind, double slots, const OpCounts& ops, double e) {
    std::snprintf(line, sizeof line, "%-18s %-7s %14.0f %14.0f %14.0f %14.0f %14.0f %16.2f\n",
                  name.c_str(), kind, slots, ops.mults, ops.add_fp32, ops.add_fix32, ops.shifts, e);
    o << line;
  };
  double slots = 0;
  for (const auto& r : rows) {
    emit(r.name, to_string(r.kind), static_cast<double>(r.slots), r.ops, r.energy);
    slots += static_cast<double>(r.slots);
  }
  emit("total", "", slots, totals, energy);
  std::snprintf(line, sizeof line, "mode %s, all-conv baseline %.2f pJ, ratio %.3f\n", to_string(mode),
                baseline_energy, ratio);
  o << line;
  return o.str();
}

std::string EnergyReport::csv() const {
  std::ostringstream o;
  o << "layer,kind,slots,mults,add_fp32,add_fix32,shifts,energy_pj\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%s,%s,%llu,%.0f,%.0f,%.0f,%.0f,%.4f\n", r.name.c_str(),
                  to_string(r.kind), static_cast<unsigned long long>(r.slots), r.ops.mults,
                  r.ops.add_fp32, r.ops.add_fix32, r.ops.shifts, r.energy);
    o << line;
  }
  return o.str();
}

std::vector<LayerDesc> describe_model(const ModelConfig& c, std::uint64_t h, std::uint64_t w) {
  c.validate();
  std::vector<LayerDesc> out;
  const std::uint64_t n = c.channels, m = c.latent_channels, k = c.kernel;
  auto push = [&](std::string name, LayerKind kind, std::uint64_t kk, std::uint64_t cin,
                  std::uint64_t cout, std::uint64_t stride, std::uint64_t gdn) {
    LayerDesc d{std::move(name), kind, kk, cin, cout, stride, h, w, true, gdn};
    if (kind == LayerKind::kSapmE || kind == LayerKind::kSapmD) d.bias = false;
    out.push_back(d);
    h = d.hout();
    w = d.wout();
  };
  const std::uint64_t h0 = h, w0 = w;
  push("enc.in", LayerKind::kConv, k, 3, n, 2, n);
  for (std::size_t i = 0; i + 1 < c.levels; ++i) {
    const bool last = i + 2 == c.levels;
    push("enc.sapm" + std::to_string(i), LayerKind::kSapmE, k, n, last ? m : n, 2, last ? 0 : n);
  }
  const std::uint64_t yh = h, yw = w;
  push("hyper_enc.0", LayerKind::kConv, 3, m, n, 1, 0);
  push("hyper_enc.1", LayerKind::kConv, 5, n, n, 2, 0);
  push("hyper_enc.2", LayerKind::kConv, 5, n, n, 2, 0);
  push("hyper_dec.0", LayerKind::kTransposedConv, 5, n, n, 2, 0);
  push("hyper_dec.1", LayerKind::kTransposedConv, 5, n, n, 2, 0);
  push("hyper_dec.2", LayerKind::kConv, 3, n, 3 * c.mixtures * m, 1, 0);
  h = yh;
  w = yw;
  for (std::size_t i = 0; i + 1 < c.levels; ++i)
    push("dec.sapm" + std::to_string(i), LayerKind::kSapmD, k, i == 0 ? m : n, n, 2, n);
  push("dec.out", LayerKind::kTransposedConv, k, n, 3, 2, 0);
  if (h != h0 || w != w0) throw std::logic_error("describe_model: decoder does not restore the size");
  return out;
}

}  // namespace sapm
