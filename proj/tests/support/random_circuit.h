#pragma once

// Random straight-line fixed-point circuits, run three ways: over shares, in
// the plaintext ring interpreter, and in double precision with a propagated
// error bound.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "shapmkt/mpc_engine.h"
#include "shapmkt/rng.h"

namespace shapmkt::testing {

enum class OpKind { kLincomb, kMul, kSquare, kMatVec, kMean, kShift };

struct CircuitOp {
  OpKind kind;
  int a = 0, b = 0;
  double ca = 1.0, cb = 1.0;
  std::vector<double> offset;
  std::vector<std::size_t> counts;  // kMean: one count per operand in `mean_args`
  std::vector<int> mean_args;
  unsigned shift = 0;
};

struct RandomCircuit {
  std::size_t width = 4;
  std::vector<std::vector<double>> inputs;  // register initial values
  std::vector<double> weight;               // width x width, shared matrix
  std::vector<double> bias;
  std::vector<CircuitOp> ops;                // each op appends one register
};

struct FloatResult {
  std::vector<std::vector<double>> regs;
  std::vector<std::vector<double>> bound;  // absolute error budget per coordinate
};

inline FloatResult RunFloat(const RandomCircuit& c, const FixCfg& cfg) {
  const double ulp = std::ldexp(1.0, -static_cast<int>(cfg.f()));
  FloatResult r;
  auto enc_err = [&](const std::vector<double>& v) { return std::vector<double>(v.size(), ulp / 2); };
  for (const auto& in : c.inputs) {
    r.regs.push_back(in);
    r.bound.push_back(enc_err(in));
  }
  const std::size_t w = c.width;
  std::vector<double> werr(w * w, ulp / 2), berr(w, ulp / 2);
  for (const CircuitOp& op : c.ops) {
    std::vector<double> v(w), e(w);
    const auto& xa = r.regs[op.a];
    const auto& ea = r.bound[op.a];
    const auto& xb = r.regs[op.b];
    const auto& eb = r.bound[op.b];
    switch (op.kind) {
      case OpKind::kLincomb: {
        const bool integral = std::nearbyint(op.ca) == op.ca && std::nearbyint(op.cb) == op.cb;
        const double cerr = integral ? 0.0 : ulp / 2;
        for (std::size_t i = 0; i < w; ++i) {
          v[i] = op.ca * xa[i] + op.cb * xb[i] + op.offset[i];
          e[i] = std::fabs(op.ca) * ea[i] + std::fabs(op.cb) * eb[i] +
                 cerr * (std::fabs(xa[i]) + ea[i] + std::fabs(xb[i]) + eb[i]) +
                 (integral ? 0.0 : ulp) + ulp / 2;
        }
        break;
      }
      case OpKind::kMul:
      case OpKind::kSquare: {
        const auto& y = op.kind == OpKind::kMul ? xb : xa;
        const auto& ey = op.kind == OpKind::kMul ? eb : ea;
        for (std::size_t i = 0; i < w; ++i) {
          v[i] = xa[i] * y[i];
          e[i] = std::fabs(xa[i]) * ey[i] + std::fabs(y[i]) * ea[i] + ea[i] * ey[i] + ulp;
        }
        break;
      }
      case OpKind::kMatVec: {
        for (std::size_t o = 0; o < w; ++o) {
          double s = c.bias[o], err = berr[o] + ulp;
          for (std::size_t i = 0; i < w; ++i) {
            s += c.weight[o * w + i] * xa[i];
            err += std::fabs(c.weight[o * w + i]) * ea[i] + std::fabs(xa[i]) * werr[o * w + i] +
                   werr[o * w + i] * ea[i];
          }
          v[o] = s;
          e[o] = err;
        }
        break;
      }
      case OpKind::kMean: {
        std::size_t total = 0;
        for (std::size_t n : op.counts) total += n;
        for (std::size_t i = 0; i < w; ++i) {
          double s = 0.0, err = 0.0;
          for (int idx : op.mean_args) {
            s += r.regs[idx][i];
            err += r.bound[idx][i];
          }
          v[i] = s / static_cast<double>(total);
          // Multiplier rounding is relative 2^-(f+1); the final shift floors.
          e[i] = err / static_cast<double>(total) + std::fabs(s) * ulp / 2 + ulp;
        }
        break;
      }
      case OpKind::kShift: {
        const double scale = std::ldexp(1.0, -static_cast<int>(op.shift));
        for (std::size_t i = 0; i < w; ++i) {
          v[i] = xa[i] * scale;
          e[i] = ea[i] * scale + ulp;
        }
        break;
      }
    }
    r.regs.push_back(std::move(v));
    r.bound.push_back(std::move(e));
  }
  return r;
}

// Draws ops whose float magnitudes stay within `limit`.
inline RandomCircuit MakeRandomCircuit(Rng& rng, std::size_t width, std::size_t n_inputs,
                                       std::size_t n_ops, const FixCfg& cfg, double limit = 64.0) {
  RandomCircuit c;
  c.width = width;
  auto draw = [&](double lo, double hi) { return lo + (hi - lo) * rng.Uniform(); };
  for (std::size_t i = 0; i < n_inputs; ++i) {
    std::vector<double> v(width);
    for (auto& x : v) x = draw(-2.0, 2.0);
    c.inputs.push_back(v);
  }
  c.weight.resize(width * width);
  for (auto& x : c.weight) x = draw(-1.0, 1.0);
  c.bias.resize(width);
  for (auto& x : c.bias) x = draw(-0.5, 0.5);

  while (c.ops.size() < n_ops) {
    FloatResult cur = RunFloat(c, cfg);
    const int regs = static_cast<int>(cur.regs.size());
    CircuitOp op;
    op.kind = static_cast<OpKind>(rng.UniformInt(0, 5));
    op.a = static_cast<int>(rng.UniformInt(0, regs - 1));
    op.b = static_cast<int>(rng.UniformInt(0, regs - 1));
    switch (op.kind) {
      case OpKind::kLincomb:
        if (rng.Uniform() < 0.5) {
          op.ca = static_cast<double>(rng.UniformInt(0, 6)) - 3.0;
          op.cb = static_cast<double>(rng.UniformInt(0, 6)) - 3.0;
        } else {
          op.ca = draw(-2.0, 2.0);
          op.cb = draw(-2.0, 2.0);
        }
        op.offset.resize(width);
        for (auto& x : op.offset) x = draw(-1.0, 1.0);
        break;
      case OpKind::kMean: {
        const std::size_t k = 1 + rng.UniformInt(0, 2);
        for (std::size_t i = 0; i < k; ++i) {
          op.mean_args.push_back(static_cast<int>(rng.UniformInt(0, regs - 1)));
          op.counts.push_back(1 + rng.UniformInt(0, 9));
        }
        break;
      }
      case OpKind::kShift:
        op.shift = 1 + static_cast<unsigned>(rng.UniformInt(0, 3));
        break;
      default:
        break;
    }
    c.ops.push_back(op);
    FloatResult next = RunFloat(c, cfg);
    double mx = 0.0;
    for (double x : next.regs.back()) mx = std::max(mx, std::fabs(x));
    if (mx > limit) c.ops.pop_back();
  }
  return c;
}

inline std::vector<RingTensor> RunInterpreter(const RandomCircuit& c, const FixedPointInterpreter& fp) {
  const std::size_t w = c.width;
  std::vector<RingTensor> regs;
  for (const auto& in : c.inputs) regs.push_back(fp.Encode(in, {w}));
  const RingTensor W = fp.Encode(c.weight, {w, w});
  const RingTensor B = fp.Encode(c.bias, {w});
  for (const CircuitOp& op : c.ops) {
    switch (op.kind) {
      case OpKind::kLincomb: {
        std::pair<double, const RingTensor*> terms[] = {{op.ca, &regs[op.a]}, {op.cb, &regs[op.b]}};
        regs.push_back(fp.Lincomb(terms, op.offset));
        break;
      }
      case OpKind::kMul: regs.push_back(fp.Mul(regs[op.a], regs[op.b])); break;
      case OpKind::kSquare: regs.push_back(fp.Square(regs[op.a])); break;
      case OpKind::kMatVec: regs.push_back(fp.MatVecAffine(W, regs[op.a], B)); break;
      case OpKind::kMean: {
        std::vector<RingTensor> reps;
        for (int i : op.mean_args) reps.push_back(regs[i]);
        regs.push_back(fp.MeanReadout(reps, op.counts));
        break;
      }
      case OpKind::kShift: regs.push_back(fp.Truncate(regs[op.a], op.shift)); break;
    }
  }
  return regs;
}

inline std::vector<SharedTensor> RunEngine(const RandomCircuit& c, Engine& eng,
                                           const std::vector<PartyId>& parties) {
  const std::size_t w = c.width;
  std::vector<SharedTensor> regs;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const PartyId owner = parties[i % parties.size()];
    regs.push_back(eng.InputTensor(owner, c.inputs[i], {w}, parties));
  }
  const SharedTensor W = eng.InputTensor(parties[0], c.weight, {w, w}, parties);
  const SharedTensor B = eng.InputTensor(parties[0], c.bias, {w}, parties);
  for (const CircuitOp& op : c.ops) {
    switch (op.kind) {
      case OpKind::kLincomb: {
        LinTerm terms[] = {{op.ca, &regs[op.a]}, {op.cb, &regs[op.b]}};
        regs.push_back(eng.Lincomb(terms, op.offset));
        break;
      }
      case OpKind::kMul: regs.push_back(eng.BeaverMul(regs[op.a], regs[op.b])); break;
      case OpKind::kSquare: regs.push_back(eng.Square(regs[op.a])); break;
      case OpKind::kMatVec: regs.push_back(eng.MatVecAffine(W, regs[op.a], B)); break;
      case OpKind::kMean: {
        std::vector<SharedTensor> reps;
        for (int i : op.mean_args) reps.push_back(regs[i]);
        regs.push_back(eng.MeanReadout(reps, op.counts));
        break;
      }
      case OpKind::kShift: regs.push_back(eng.Truncate(regs[op.a], op.shift)); break;
    }
  }
  return regs;
}

}  // namespace shapmkt::testing
