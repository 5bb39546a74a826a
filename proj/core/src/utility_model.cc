#include "shapmkt/utility_model.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include "shapmkt/error.h"

namespace shapmkt {

// ---------------------------------------------------------------------------
// Layers

std::size_t Layer::out_h() const {
  if (kind == LayerKind::kDense) return 1;
  return (in_h + 2 * pad - kernel) / stride + 1;
}

std::size_t Layer::out_w() const {
  if (kind == LayerKind::kDense) return 1;
  return (in_w + 2 * pad - kernel) / stride + 1;
}

std::size_t Layer::positions() const { return kind == LayerKind::kDense ? 1 : out_h() * out_w(); }
std::size_t Layer::rows() const { return kind == LayerKind::kDense ? out : out_c; }
std::size_t Layer::cols() const { return kind == LayerKind::kDense ? in : in_c * kernel * kernel; }
std::size_t Layer::input_size() const { return kind == LayerKind::kDense ? in : in_c * in_h * in_w; }
std::size_t Layer::output_size() const { return rows() * positions(); }

Layer DenseLayer(std::size_t in, std::size_t out, Activation act) {
  Layer l;
  l.kind = LayerKind::kDense;
  l.in = in;
  l.out = out;
  l.act = act;
  l.w.assign(in * out, 0.0);
  l.b.assign(out, 0.0);
  return l;
}

Layer ConvLayer(std::size_t in_c, std::size_t in_h, std::size_t in_w, std::size_t out_c,
                std::size_t kernel, std::size_t stride, std::size_t pad, Activation act) {
  Layer l;
  l.kind = LayerKind::kConv;
  l.in_c = in_c;
  l.in_h = in_h;
  l.in_w = in_w;
  l.out_c = out_c;
  l.kernel = kernel;
  l.stride = stride;
  l.pad = pad;
  l.act = act;
  if (kernel == 0 || stride == 0 || in_h + 2 * pad < kernel || in_w + 2 * pad < kernel) {
    throw Error(ErrorCode::kShape, "convolution window does not fit the input");
  }
  l.w.assign(l.rows() * l.cols(), 0.0);
  l.b.assign(out_c, 0.0);
  return l;
}

std::vector<std::int64_t> Im2ColIndex(const Layer& l) {
  if (l.kind == LayerKind::kDense) {
    std::vector<std::int64_t> idx(l.in);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  const std::size_t oh = l.out_h(), ow = l.out_w(), K = l.cols();
  std::vector<std::int64_t> idx(oh * ow * K, -1);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const std::size_t p = y * ow + x;
      for (std::size_t c = 0; c < l.in_c; ++c) {
        for (std::size_t ky = 0; ky < l.kernel; ++ky) {
          for (std::size_t kx = 0; kx < l.kernel; ++kx) {
            const std::size_t k = (c * l.kernel + ky) * l.kernel + kx;
            const std::int64_t iy = static_cast<std::int64_t>(y * l.stride + ky) -
                                    static_cast<std::int64_t>(l.pad);
            const std::int64_t ix = static_cast<std::int64_t>(x * l.stride + kx) -
                                    static_cast<std::int64_t>(l.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(l.in_h) ||
                ix >= static_cast<std::int64_t>(l.in_w)) {
              continue;
            }
            idx[p * K + k] = static_cast<std::int64_t>((c * l.in_h + iy) * l.in_w + ix);
          }
        }
      }
    }
  }
  return idx;
}

namespace {

const char* ActName(Activation a) { return a == Activation::kSquare ? "square" : "none"; }

std::vector<const Layer*> Ordered(const UtilityModel& m) {
  std::vector<const Layer*> v;
  for (const auto& l : m.extractor) v.push_back(&l);
  v.push_back(&m.trans);
  for (const auto& l : m.network) v.push_back(&l);
  return v;
}

std::vector<Layer*> Ordered(UtilityModel& m) {
  std::vector<Layer*> v;
  for (auto& l : m.extractor) v.push_back(&l);
  v.push_back(&m.trans);
  for (auto& l : m.network) v.push_back(&l);
  return v;
}

std::vector<std::string> LayerNames(const UtilityModel& m) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < m.extractor.size(); ++i) v.push_back("extractor[" + std::to_string(i) + "]");
  v.push_back("trans");
  for (std::size_t i = 0; i < m.network.size(); ++i) v.push_back("network[" + std::to_string(i) + "]");
  return v;
}

// Offset of each ordered layer's weights in the flat parameter vector.
std::vector<std::size_t> Offsets(const UtilityModel& m) {
  std::vector<std::size_t> off;
  std::size_t o = 0;
  for (const Layer* l : Ordered(m)) {
    off.push_back(o);
    o += l->w.size() + l->b.size();
  }
  off.push_back(o);
  return off;
}

// Per-sample layer evaluation with the pre-activation kept for backprop.
struct LayerCache {
  std::vector<double> input, z;
};

std::vector<double> LayerForward(const Layer& l, const std::vector<std::int64_t>* idx,
                                 std::span<const double> a, LayerCache* cache) {
  const std::size_t R = l.rows(), K = l.cols(), P = l.positions();
  std::vector<double> z(R * P);
  if (l.kind == LayerKind::kDense) {
    for (std::size_t o = 0; o < R; ++o) {
      double s = l.b[o];
      const double* w = l.w.data() + o * K;
      for (std::size_t i = 0; i < K; ++i) s += w[i] * a[i];
      z[o] = s;
    }
  } else {
    std::vector<double> col(K);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t k = 0; k < K; ++k) {
        const std::int64_t j = (*idx)[p * K + k];
        col[k] = j < 0 ? 0.0 : a[static_cast<std::size_t>(j)];
      }
      for (std::size_t o = 0; o < R; ++o) {
        double s = l.b[o];
        const double* w = l.w.data() + o * K;
        for (std::size_t k = 0; k < K; ++k) s += w[k] * col[k];
        z[o * P + p] = s;
      }
    }
  }
  if (cache) {
    cache->input.assign(a.begin(), a.end());
    cache->z = z;
  }
  if (l.act == Activation::kSquare) {
    for (double& v : z) v *= v;
  }
  return z;
}

// Accumulates dL/dw, dL/db at g_off and returns dL/da.
std::vector<double> LayerBackward(const Layer& l, const std::vector<std::int64_t>* idx,
                                  const LayerCache& c, std::span<const double> dout, double* g,
                                  bool need_input_grad) {
  const std::size_t R = l.rows(), K = l.cols(), P = l.positions();
  std::vector<double> dz(dout.begin(), dout.end());
  if (l.act == Activation::kSquare) {
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] *= 2.0 * c.z[i];
  }
  double* gw = g;
  double* gb = g + l.w.size();
  std::vector<double> da(need_input_grad ? l.input_size() : 0, 0.0);
  if (l.kind == LayerKind::kDense) {
    for (std::size_t o = 0; o < R; ++o) {
      const double d = dz[o];
      gb[o] += d;
      if (d == 0.0) continue;
      double* row = gw + o * K;
      const double* w = l.w.data() + o * K;
      for (std::size_t i = 0; i < K; ++i) {
        row[i] += d * c.input[i];
        if (need_input_grad) da[i] += w[i] * d;
      }
    }
  } else {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t o = 0; o < R; ++o) {
        const double d = dz[o * P + p];
        gb[o] += d;
        if (d == 0.0) continue;
        double* row = gw + o * K;
        const double* w = l.w.data() + o * K;
        for (std::size_t k = 0; k < K; ++k) {
          const std::int64_t j = (*idx)[p * K + k];
          if (j < 0) continue;
          row[k] += d * c.input[static_cast<std::size_t>(j)];
          if (need_input_grad) da[static_cast<std::size_t>(j)] += w[k] * d;
        }
      }
    }
  }
  return da;
}

std::vector<std::vector<std::int64_t>> ConvIndices(const std::vector<const Layer*>& layers) {
  std::vector<std::vector<std::int64_t>> v;
  for (const Layer* l : layers) v.push_back(l->kind == LayerKind::kConv ? Im2ColIndex(*l) : std::vector<std::int64_t>{});
  return v;
}

void CheckSampleWidth(const UtilityModel& m, std::size_t cols) {
  if (cols != m.input_dim) {
    throw Error(ErrorCode::kShape, "sample width " + std::to_string(cols) +
                                       " does not match model input " + std::to_string(m.input_dim));
  }
}

void AppendLabel(const UtilityModel& m, std::vector<double>& h, int label) {
  if (!m.label_aware) return;
  if (label < 0 || label >= m.classes) {
    throw Error(ErrorCode::kShape, "label-aware model needs a label in [0, classes)");
  }
  const std::size_t base = h.size();
  h.resize(base + static_cast<std::size_t>(m.classes), 0.0);
  h[base + static_cast<std::size_t>(label)] = 1.0;
}

// G_f(x), with the one-hot label appended in label-aware mode.
std::vector<double> Embed(const UtilityModel& m, const std::vector<std::vector<std::int64_t>>& idx,
                          std::span<const double> x, int label,
                          std::vector<LayerCache>* caches) {
  std::vector<double> a(x.begin(), x.end());
  if (caches) caches->resize(m.extractor.size());
  for (std::size_t i = 0; i < m.extractor.size(); ++i) {
    a = LayerForward(m.extractor[i], &idx[i], a, caches ? &(*caches)[i] : nullptr);
  }
  AppendLabel(m, a, label);
  return a;
}

// Mean embedding through f_DS^trans and f_DS^network; the trans layer is
// affine, so the mean of phi equals trans applied to the mean embedding.
double HeadForward(const UtilityModel& m, std::span<const double> ebar,
                   std::vector<LayerCache>* caches) {
  if (caches) caches->resize(1 + m.network.size());
  std::vector<double> y = LayerForward(m.trans, nullptr, ebar, caches ? &(*caches)[0] : nullptr);
  for (std::size_t i = 0; i < m.network.size(); ++i) {
    y = LayerForward(m.network[i], nullptr, y, caches ? &(*caches)[i + 1] : nullptr);
  }
  return y.at(0);
}

std::vector<double> HeadBackward(const UtilityModel& m, const std::vector<LayerCache>& caches,
                                 double dpre, std::span<const std::size_t> off, double* g,
                                 bool need_input_grad) {
  const std::size_t E = m.extractor.size();
  std::vector<double> d{dpre};
  for (std::size_t i = m.network.size(); i-- > 0;) {
    d = LayerBackward(m.network[i], nullptr, caches[i + 1], d, g + off[E + 1 + i], true);
  }
  return LayerBackward(m.trans, nullptr, caches[0], d, g + off[E], need_input_grad);
}

double WeightDecayTerm(const UtilityModel& m, double wd, std::span<const std::size_t> off,
                       double* g, bool extractor, bool head) {
  double s = 0.0;
  const auto layers = Ordered(m);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool is_ex = i < m.extractor.size();
    if ((is_ex && !extractor) || (!is_ex && !head)) continue;
    for (std::size_t j = 0; j < layers[i]->w.size(); ++j) {
      const double w = layers[i]->w[j];
      s += w * w;
      if (g) g[off[i] + j] += wd * w;
    }
  }
  return 0.5 * wd * s;
}

double Logit(double u) {
  const double c = std::clamp(u, 1e-12, 1.0 - 1e-12);
  return std::log(c / (1.0 - c));
}

}  // namespace

double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Model

std::size_t UtilityModel::embedding_dim() const {
  const std::size_t base = extractor.empty() ? input_dim : extractor.back().output_size();
  return base + (label_aware ? static_cast<std::size_t>(classes) : 0);
}

std::size_t UtilityModel::repr_dim() const { return trans.output_size(); }

std::size_t UtilityModel::parameter_count() const {
  std::size_t n = 0;
  for (const Layer* l : Ordered(*this)) n += l->w.size() + l->b.size();
  return n;
}

void UtilityModel::Validate() const {
  if (input_dim == 0) throw Error(ErrorCode::kValidation, "model input width is zero");
  if (classes < 1) throw Error(ErrorCode::kValidation, "class count must be positive");
  if (!(empty_utility >= 0.0 && empty_utility <= 1.0)) {
    throw Error(ErrorCode::kValidation, "empty-coalition utility must lie in [0, 1]");
  }
  if (network.empty()) throw Error(ErrorCode::kValidation, "network has no layers");
  const auto layers = Ordered(*this);
  const auto names = LayerNames(*this);
  std::size_t width = input_dim;
  std::string prev = "input";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = *layers[i];
    const std::string& name = names[i];
    if (i == extractor.size() && label_aware) {
      width += static_cast<std::size_t>(classes);
      prev += " plus label";
    }
    if (i >= extractor.size() && l.kind != LayerKind::kDense) {
      throw Error(ErrorCode::kValidation, "layer " + name + ": f_DS layers must be fully connected");
    }
    if (l.kind == LayerKind::kConv &&
        (l.kernel == 0 || l.stride == 0 || l.in_h + 2 * l.pad < l.kernel || l.in_w + 2 * l.pad < l.kernel)) {
      throw Error(ErrorCode::kValidation, "layer " + name + ": convolution window does not fit");
    }
    if (l.input_size() != width) {
      throw Error(ErrorCode::kValidation, "layer " + name + ": expects " +
                                              std::to_string(l.input_size()) + " inputs but " + prev +
                                              " provides " + std::to_string(width));
    }
    if (l.rows() == 0 || l.w.size() != l.rows() * l.cols() || l.b.size() != l.rows()) {
      throw Error(ErrorCode::kValidation, "layer " + name + ": parameter count does not match its shape");
    }
    width = l.output_size();
    prev = name;
  }
  if (width != 1) {
    throw Error(ErrorCode::kValidation, "layer " + names.back() + ": final output width must be 1");
  }
}


namespace {

void InitLayer(Layer& l, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(l.cols()));
  for (double& w : l.w) w = sd * rng.Normal();
  std::fill(l.b.begin(), l.b.end(), 0.0);
}

}  // namespace

UtilityModel BuildPreset(const std::string& name, const PresetOptions& opt) {
  UtilityModel m;
  m.preset = name;
  m.classes = opt.classes;
  m.label_aware = opt.label_aware;
  if (opt.classes < 1) throw Error(ErrorCode::kParameter, "class count must be positive");
  m.empty_utility = 1.0 / static_cast<double>(opt.classes);
  const std::size_t lab = opt.label_aware ? static_cast<std::size_t>(opt.classes) : 0;
  if (name == "mnist-like") {
    m.input_dim = 28 * 28;
    m.extractor.push_back(ConvLayer(1, 28, 28, 16, 4, 2, 1, Activation::kSquare));
    m.trans = DenseLayer(3136 + lab, 512);
    m.network = {DenseLayer(512, 256), DenseLayer(256, 1)};
  } else if (name == "cifar-like") {
    m.input_dim = 3 * 32 * 32;
    m.extractor.push_back(ConvLayer(3, 32, 32, 16, 5, 2, 2, Activation::kSquare));
    m.extractor.push_back(ConvLayer(16, 16, 16, 32, 5, 2, 2, Activation::kSquare));
    m.trans = DenseLayer(2048 + lab, 512);
    m.network = {DenseLayer(512, 256), DenseLayer(256, 1)};
  } else if (name == "mlp-synthetic") {
    if (opt.input_dim == 0) throw Error(ErrorCode::kParameter, "mlp-synthetic needs an input width");
    m.input_dim = opt.input_dim;
    m.extractor.push_back(DenseLayer(opt.input_dim, 32, Activation::kSquare));
    m.trans = DenseLayer(32 + lab, 32);
    m.network = {DenseLayer(32, 16), DenseLayer(16, 1)};
  } else {
    throw Error(ErrorCode::kParameter, "unknown model preset '" + name + "'");
  }
  Rng rng = Rng(opt.seed).Split("init");
  for (Layer* l : Ordered(m)) InitLayer(*l, rng);
  m.Validate();
  return m;
}

std::vector<double> ForwardRepr(const UtilityModel& m, std::span<const double> x, int label) {
  CheckSampleWidth(m, x.size());
  std::vector<const Layer*> ex;
  for (const auto& l : m.extractor) ex.push_back(&l);
  const auto idx = ConvIndices(ex);
  const auto e = Embed(m, idx, x, label, nullptr);
  return LayerForward(m.trans, nullptr, e, nullptr);
}

CoalitionScore ScoreCoalition(const UtilityModel& m, std::span<const Dataset* const> groups) {
  std::vector<const Layer*> ex;
  for (const auto& l : m.extractor) ex.push_back(&l);
  const auto idx = ConvIndices(ex);
  std::vector<double> sum(m.repr_dim(), 0.0);
  std::size_t n = 0;
  for (const Dataset* g : groups) {
    if (g->rows() == 0) continue;
    CheckSampleWidth(m, g->cols);
    for (std::size_t r = 0; r < g->rows(); ++r) {
      const auto e = Embed(m, idx, g->row(r), g->labelled() ? g->y[r] : -1, nullptr);
      const auto phi = LayerForward(m.trans, nullptr, e, nullptr);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += phi[i];
    }
    n += g->rows();
  }
  if (n == 0) return {Logit(m.empty_utility), m.empty_utility};
  for (double& v : sum) v /= static_cast<double>(n);
  std::vector<double> y = sum;
  for (const auto& l : m.network) y = LayerForward(l, nullptr, y, nullptr);
  return {y[0], Sigmoid(y[0])};
}

CoalitionScore ScoreCoalition(const UtilityModel& m, const Dataset& samples) {
  const Dataset* g[] = {&samples};
  return ScoreCoalition(m, g);
}

// ---------------------------------------------------------------------------
// Training

void UtilityDataset::Validate() const {
  pool.Validate();
  if (entries.empty()) throw Error(ErrorCode::kParameter, "utility dataset has no entries");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.members.empty()) throw Error(ErrorCode::kParameter, "entry " + std::to_string(i) + " is empty");
    if (!(e.utility >= 0.0 && e.utility <= 1.0)) {
      throw Error(ErrorCode::kRange, "entry " + std::to_string(i) + " utility outside [0, 1]");
    }
    for (std::size_t j : e.members) {
      if (j >= pool.rows()) throw Error(ErrorCode::kRange, "entry " + std::to_string(i) + " indexes past the pool");
    }
  }
}

void TrainConfig::Validate() const {
  if (epochs == 0 || inner_steps == 0 || batch_size == 0) {
    throw Error(ErrorCode::kParameter, "epochs, inner steps and batch size must be positive");
  }
  if (!(lr_ds > 0) || !(lr_gf > 0) || !(clip > 0)) {
    throw Error(ErrorCode::kParameter, "learning rates and clip bound must be positive");
  }
  if (!(momentum >= 0 && momentum < 1) || !(weight_decay >= 0)) {
    throw Error(ErrorCode::kParameter, "momentum must lie in [0, 1) and weight decay be non-negative");
  }
}

std::vector<double> FlattenParameters(const UtilityModel& m) {
  std::vector<double> p;
  p.reserve(m.parameter_count());
  for (const Layer* l : Ordered(m)) {
    p.insert(p.end(), l->w.begin(), l->w.end());
    p.insert(p.end(), l->b.begin(), l->b.end());
  }
  return p;
}

void SetParameters(UtilityModel& m, std::span<const double> p) {
  if (p.size() != m.parameter_count()) throw Error(ErrorCode::kShape, "parameter vector length");
  std::size_t o = 0;
  for (Layer* l : Ordered(m)) {
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(o),
              p.begin() + static_cast<std::ptrdiff_t>(o + l->w.size()), l->w.begin());
    o += l->w.size();
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(o),
              p.begin() + static_cast<std::ptrdiff_t>(o + l->b.size()), l->b.begin());
    o += l->b.size();
  }
}

namespace {

int PoolLabel(const Dataset& d, std::size_t r) { return d.labelled() ? d.y[r] : -1; }

std::vector<std::vector<std::int64_t>> ExtractorIndices(const UtilityModel& m) {
  std::vector<const Layer*> ex;
  for (const auto& l : m.extractor) ex.push_back(&l);
  return ConvIndices(ex);
}

std::vector<double> MeanEmbedding(const UtilityModel& m, const std::vector<std::vector<double>>& emb,
                                  const SdsEntry& e) {
  std::vector<double> ebar(m.embedding_dim(), 0.0);
  for (std::size_t j : e.members) {
    for (std::size_t i = 0; i < ebar.size(); ++i) ebar[i] += emb[j][i];
  }
  for (double& v : ebar) v /= static_cast<double>(e.members.size());
  return ebar;
}

// Gradient clipping by global norm over [begin, end), then a momentum step.
double Step(UtilityModel& m, std::span<const std::size_t> off, std::vector<double>& g,
            std::vector<double>& vel, std::size_t first_layer, std::size_t last_layer, double lr,
            const TrainConfig& cfg) {
  const std::size_t begin = off[first_layer], end = off[last_layer];
  double norm = 0.0;
  for (std::size_t i = begin; i < end; ++i) norm += g[i] * g[i];
  norm = std::sqrt(norm);
  const double scale = norm > cfg.clip ? cfg.clip / norm : 1.0;
  auto layers = Ordered(m);
  for (std::size_t li = first_layer; li < last_layer; ++li) {
    Layer& l = *layers[li];
    std::size_t o = off[li];
    for (auto* vec : {&l.w, &l.b}) {
      for (double& p : *vec) {
        vel[o] = cfg.momentum * vel[o] + scale * g[o];
        p -= lr * vel[o];
        ++o;
      }
    }
  }
  return norm;
}

// Training runs on inputs divided by their root mean square (per feature for a
// dense first layer, one global factor for a convolution); the factors are
// folded into the first layer afterwards, so the model itself is unchanged.
std::vector<double> InputScale(const UtilityModel& m, const Dataset& pool) {
  const std::size_t d = m.input_dim, n = pool.rows();
  const bool conv = !m.extractor.empty() && m.extractor[0].kind == LayerKind::kConv;
  std::vector<double> ss(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) ss[j] += pool.x[r * d + j] * pool.x[r * d + j];
  }
  if (conv) {
    const double total = std::accumulate(ss.begin(), ss.end(), 0.0);
    std::fill(ss.begin(), ss.end(), total / static_cast<double>(d));
  }
  std::vector<double> scale(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double rms = std::sqrt(ss[j] / static_cast<double>(std::max<std::size_t>(n, 1)));
    if (std::isfinite(rms) && rms > 1e-12) scale[j] = 1.0 / rms;
  }
  return scale;
}

void FoldInputScale(UtilityModel& m, std::span<const double> scale) {
  Layer& l = m.extractor.empty() ? m.trans : m.extractor[0];
  if (l.kind == LayerKind::kConv) {
    for (double& w : l.w) w *= scale[0];
    return;
  }
  for (std::size_t o = 0; o < l.out; ++o) {
    for (std::size_t j = 0; j < m.input_dim; ++j) l.w[o * l.in + j] *= scale[j];
  }
}

[[noreturn]] void Diverged(std::size_t epoch, const char* phase, double loss, double grad_norm) {
  std::ostringstream os;
  os << "training diverged at epoch " << epoch << " (" << phase << " phase): loss=" << loss
     << " gradient norm=" << grad_norm;
  throw Error(ErrorCode::kDivergence, os.str());
}

}  // namespace

double Objective(const UtilityModel& m, const UtilityDataset& sds, std::span<const std::size_t> entries,
                 double weight_decay, std::vector<double>* grad) {
  if (entries.empty()) throw Error(ErrorCode::kParameter, "objective over no entries");
  CheckSampleWidth(m, sds.pool.cols);
  const auto off = Offsets(m);
  const auto idx = ExtractorIndices(m);
  const std::size_t E = m.extractor.size();
  const std::size_t ex_out = E == 0 ? m.input_dim : m.extractor.back().output_size();
  if (grad) grad->assign(off.back(), 0.0);
  double* g = grad ? grad->data() : nullptr;
  const double B = static_cast<double>(entries.size());
  double loss = 0.0;
  for (std::size_t ei : entries) {
    const SdsEntry& ent = sds.entries.at(ei);
    const double n = static_cast<double>(ent.members.size());
    std::vector<double> ebar(m.embedding_dim(), 0.0);
    for (std::size_t j : ent.members) {
      const auto h = Embed(m, idx, sds.pool.row(j), PoolLabel(sds.pool, j), nullptr);
      for (std::size_t i = 0; i < ebar.size(); ++i) ebar[i] += h[i] / n;
    }
    std::vector<LayerCache> head;
    const double pre = HeadForward(m, ebar, &head);
    const double u = Sigmoid(pre);
    const double r = u - ent.utility;
    loss += r * r;
    if (!g) continue;
    const double dpre = 2.0 * r / B * u * (1.0 - u);
    const auto debar = HeadBackward(m, head, dpre, off, g, E > 0);
    if (E == 0) continue;
    std::vector<double> dh(debar.begin(), debar.begin() + static_cast<std::ptrdiff_t>(ex_out));
    for (double& v : dh) v /= n;
    for (std::size_t j : ent.members) {
      std::vector<LayerCache> caches;
      Embed(m, idx, sds.pool.row(j), PoolLabel(sds.pool, j), &caches);
      std::vector<double> d = dh;
      for (std::size_t i = E; i-- > 0;) {
        d = LayerBackward(m.extractor[i], &idx[i], caches[i], d, g + off[i], i > 0);
      }
    }
  }
  return loss / B + WeightDecayTerm(m, weight_decay, off, g, true, true);
}

double DatasetLoss(const UtilityModel& m, const UtilityDataset& sds) {
  std::vector<std::size_t> all(sds.entries.size());
  std::iota(all.begin(), all.end(), 0);
  return Objective(m, sds, all, 0.0, nullptr);
}

TrainResult TrainUtility(UtilityModel m, const UtilityDataset& raw, const TrainConfig& cfg) {
  cfg.Validate();
  m.Validate();
  raw.Validate();
  CheckSampleWidth(m, raw.pool.cols);
  if (m.label_aware && !raw.pool.labelled()) {
    throw Error(ErrorCode::kParameter, "label-aware model needs a labelled pool");
  }
  const auto scale = InputScale(m, raw.pool);
  UtilityDataset sds = raw;
  for (std::size_t i = 0; i < sds.pool.x.size(); ++i) sds.pool.x[i] *= scale[i % m.input_dim];
  const auto off = Offsets(m);
  const std::size_t E = m.extractor.size();
  const std::size_t L = off.size() - 1;
  const auto idx = ExtractorIndices(m);
  std::vector<double> vel(off.back(), 0.0);
  Rng rng = Rng(cfg.seed).Split("train");
  const std::size_t M = sds.entries.size();
  auto draw = [&] {
    std::vector<std::size_t> b(std::min(cfg.batch_size, M));
    for (auto& v : b) v = rng.UniformInt(0, M - 1);
    return b;
  };

  TrainResult res;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // G_f fixed: embeddings are constants for the f_DS phase.
    std::vector<std::vector<double>> emb(sds.pool.rows());
    for (std::size_t r = 0; r < emb.size(); ++r) {
      emb[r] = Embed(m, idx, sds.pool.row(r), PoolLabel(sds.pool, r), nullptr);
    }
    std::vector<std::vector<double>> ebar(M);
    for (std::size_t i = 0; i < M; ++i) ebar[i] = MeanEmbedding(m, emb, sds.entries[i]);

    for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
      const auto batch = draw();
      std::vector<double> g(off.back(), 0.0);
      double loss = 0.0;
      for (std::size_t ei : batch) {
        std::vector<LayerCache> head;
        const double pre = HeadForward(m, ebar[ei], &head);
        const double u = Sigmoid(pre);
        const double r = u - sds.entries[ei].utility;
        loss += r * r;
        HeadBackward(m, head, 2.0 * r / static_cast<double>(batch.size()) * u * (1.0 - u), off,
                     g.data(), false);
      }
      loss = loss / static_cast<double>(batch.size()) +
             WeightDecayTerm(m, cfg.weight_decay, off, g.data(), false, true);
      const double norm = Step(m, off, g, vel, E, L, cfg.lr_ds, cfg);
      if (!std::isfinite(loss) || !std::isfinite(norm)) Diverged(epoch, "f_DS", loss, norm);
    }

    if (E > 0) {
      const auto batch = draw();
      std::vector<double> g;
      const double loss = Objective(m, sds, batch, cfg.weight_decay, &g);
      const double norm = Step(m, off, g, vel, 0, E, cfg.lr_gf, cfg);
      if (!std::isfinite(loss) || !std::isfinite(norm)) Diverged(epoch, "G_f", loss, norm);
    }

    const double full = DatasetLoss(m, sds);
    if (!std::isfinite(full)) Diverged(epoch, "evaluation", full, 0.0);
    res.loss_history.push_back(full);
  }
  FoldInputScale(m, scale);
  res.model = std::move(m);
  return res;
}

// ---------------------------------------------------------------------------
// Model files

namespace {

std::string FormatDouble(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double ParseDouble(const std::string& s, std::size_t line) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kFormat, "line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::size_t ParseSize(const std::string& s, std::size_t line) {
  std::size_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kFormat, "line " + std::to_string(line) + ": bad integer '" + s + "'");
  }
  return v;
}

Activation ParseAct(const std::string& s, std::size_t line) {
  if (s == "square") return Activation::kSquare;
  if (s == "none") return Activation::kNone;
  throw Error(ErrorCode::kFormat, "line " + std::to_string(line) + ": unknown activation '" + s + "'");
}

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  std::vector<std::string> Next() {
    std::string text;
    while (std::getline(is_, text)) {
      ++line_;
      std::istringstream ss(text);
      std::vector<std::string> tok;
      for (std::string t; ss >> t;) tok.push_back(t);
      if (!tok.empty()) return tok;
    }
    throw Error(ErrorCode::kFormat, "unexpected end of model file after line " + std::to_string(line_));
  }

  // "key value" line.
  std::string Field(const char* key) {
    auto t = Next();
    if (t.size() != 2 || t[0] != key) {
      throw Error(ErrorCode::kFormat, "line " + std::to_string(line_) + ": expected '" + key + " <value>'");
    }
    return t[1];
  }

  std::size_t line() const { return line_; }

 private:
  std::istream& is_;
  std::size_t line_ = 0;
};

}  // namespace

void WriteModel(const UtilityModel& m, std::ostream& os) {
  m.Validate();
  os << kModelMagic << ' ' << kModelVersion << '\n';
  os << "preset " << (m.preset.empty() ? "custom" : m.preset) << '\n';
  os << "fraction_bits " << m.fraction_bits << '\n';
  os << "input_dim " << m.input_dim << '\n';
  os << "classes " << m.classes << '\n';
  os << "label_aware " << (m.label_aware ? 1 : 0) << '\n';
  os << "final_sigmoid " << (m.final_sigmoid ? 1 : 0) << '\n';
  os << "empty_utility " << FormatDouble(m.empty_utility) << '\n';
  const auto layers = Ordered(m);
  const auto names = LayerNames(m);
  os << "layers " << layers.size() << '\n';
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = *layers[i];
    os << names[i] << ' ';
    if (l.kind == LayerKind::kDense) {
      os << "dense " << l.in << ' ' << l.out;
    } else {
      os << "conv " << l.in_c << ' ' << l.in_h << ' ' << l.in_w << ' ' << l.out_c << ' ' << l.kernel
         << ' ' << l.stride << ' ' << l.pad;
    }
    os << ' ' << ActName(l.act) << '\n';
  }
  os << "weights\n";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const char* part : {"w", "b"}) {
      const auto& v = part[0] == 'w' ? layers[i]->w : layers[i]->b;
      os << names[i] << ' ' << part;
      for (double x : v) os << ' ' << FormatDouble(x);
      os << '\n';
    }
  }
}

UtilityModel ReadModel(std::istream& is) {
  LineReader in(is);
  auto head = in.Next();
  if (head[0] != kModelMagic) throw Error(ErrorCode::kFormat, "not a model file (bad magic)");
  if (head.size() != 2) throw Error(ErrorCode::kFormat, "line 1: missing version");
  if (ParseSize(head[1], 1) != static_cast<std::size_t>(kModelVersion)) {
    throw Error(ErrorCode::kVersion, "model file version " + head[1] + ", expected " +
                                         std::to_string(kModelVersion));
  }
  UtilityModel m;
  m.preset = in.Field("preset");
  m.fraction_bits = static_cast<unsigned>(ParseSize(in.Field("fraction_bits"), in.line()));
  m.input_dim = ParseSize(in.Field("input_dim"), in.line());
  m.classes = static_cast<int>(ParseSize(in.Field("classes"), in.line()));
  m.label_aware = ParseSize(in.Field("label_aware"), in.line()) != 0;
  m.final_sigmoid = ParseSize(in.Field("final_sigmoid"), in.line()) != 0;
  m.empty_utility = ParseDouble(in.Field("empty_utility"), in.line());
  const std::size_t count = ParseSize(in.Field("layers"), in.line());
  bool have_trans = false;
  for (std::size_t i = 0; i < count; ++i) {
    auto t = in.Next();
    const std::size_t ln = in.line();
    Layer l;
    if (t.size() == 5 && t[1] == "dense") {
      l = DenseLayer(ParseSize(t[2], ln), ParseSize(t[3], ln), ParseAct(t[4], ln));
    } else if (t.size() == 10 && t[1] == "conv") {
      std::size_t v[7];
      for (int k = 0; k < 7; ++k) v[k] = ParseSize(t[2 + k], ln);
      try {
        l = ConvLayer(v[0], v[1], v[2], v[3], v[4], v[5], v[6], ParseAct(t[9], ln));
      } catch (const Error& e) {
        throw Error(ErrorCode::kValidation, "layer " + t[0] + ": " + e.what());
      }
    } else {
      throw Error(ErrorCode::kFormat, "line " + std::to_string(ln) + ": malformed layer entry");
    }
    if (t[0].rfind("extractor", 0) == 0 && !have_trans) {
      m.extractor.push_back(std::move(l));
    } else if (t[0] == "trans" && !have_trans) {
      m.trans = std::move(l);
      have_trans = true;
    } else if (t[0].rfind("network", 0) == 0 && have_trans) {
      m.network.push_back(std::move(l));
    } else {
      throw Error(ErrorCode::kFormat, "line " + std::to_string(ln) + ": unexpected layer '" + t[0] + "'");
    }
  }
  if (!have_trans) throw Error(ErrorCode::kFormat, "model file has no trans layer");
  m.Validate();
  if (in.Next() != std::vector<std::string>{"weights"}) {
    throw Error(ErrorCode::kFormat, "line " + std::to_string(in.line()) + ": expected 'weights'");
  }
  const auto names = LayerNames(m);
  auto layers = Ordered(m);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const char* part : {"w", "b"}) {
      auto t = in.Next();
      auto& v = part[0] == 'w' ? layers[i]->w : layers[i]->b;
      if (t.size() < 2 || t[0] != names[i] || t[1] != part) {
        throw Error(ErrorCode::kFormat, "line " + std::to_string(in.line()) + ": expected " + names[i] +
                                            " " + part);
      }
      if (t.size() - 2 != v.size()) {
        throw Error(ErrorCode::kFormat, "line " + std::to_string(in.line()) + ": " + names[i] + " " + part +
                                            " has " + std::to_string(t.size() - 2) + " values, expected " +
                                            std::to_string(v.size()));
      }
      for (std::size_t k = 0; k < v.size(); ++k) v[k] = ParseDouble(t[k + 2], in.line());
    }
  }
  return m;
}

void SaveModel(const UtilityModel& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + path);
  WriteModel(m, os);
  if (!os) throw Error(ErrorCode::kIo, "write failed for " + path);
}

UtilityModel LoadModel(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + path);
  return ReadModel(is);
}

// ---------------------------------------------------------------------------
// Fixed-point and secure scoring. Both run one templated op sequence.

namespace {

struct FxOps {
  using T = RingTensor;
  const FixedPointInterpreter& fp;

  T Weights(std::span<const double> v, Shape s) { return fp.Encode(v, std::move(s)); }
  T MatVec(const T& w, const T& x, const T& b) { return fp.MatVecAffine(w, x, b); }
  T Square(const T& x) { return fp.Square(x); }
  T Gather(const T& x, std::span<const std::int64_t> idx, Shape s) { return fp.Gather(x, idx, std::move(s)); }
  T SumRows(const T& x) { return fp.SumRows(x); }
  T Concat(const T& a, const T& b) {
    T z{{a.v.size() + b.v.size()}, a.v};
    z.v.insert(z.v.end(), b.v.begin(), b.v.end());
    return z;
  }
};

struct SecureOps {
  using T = SharedTensor;
  Engine& e;
  std::vector<PartyId> holders;

  T Weights(std::span<const double> v, Shape s) { return e.InputTensor(kBuyer, v, std::move(s), holders); }
  T MatVec(const T& w, const T& x, const T& b) { return e.MatVecAffine(w, x, b); }
  T Square(const T& x) { return e.Square(x); }
  T Gather(const T& x, std::span<const std::int64_t> idx, Shape s) { return e.Gather(x, idx, std::move(s)); }
  T SumRows(const T& x) { return e.SumRows(x); }
  T Concat(const T& a, const T& b) {
    const T parts[] = {a, b};
    return e.Concat(parts);
  }
};

// x is [batch, input_size]; returns [batch, output_size].
template <class Ops>
typename Ops::T ApplyLayer(Ops& ops, const Layer& l, const typename Ops::T& x, std::size_t batch) {
  auto w = ops.Weights(l.w, {l.rows(), l.cols()});
  auto b = ops.Weights(l.b, {l.rows()});
  typename Ops::T y;
  if (l.kind == LayerKind::kDense) {
    y = ops.MatVec(w, x, b);
  } else {
    const auto idx = Im2ColIndex(l);
    const std::size_t P = l.positions(), K = l.cols(), R = l.rows(), in = l.input_size();
    std::vector<std::int64_t> full(batch * P * K);
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t t = 0; t < P * K; ++t) {
        full[s * P * K + t] = idx[t] < 0 ? -1 : static_cast<std::int64_t>(s * in) + idx[t];
      }
    }
    y = ops.MatVec(w, ops.Gather(x, full, {batch * P, K}), b);
    std::vector<std::int64_t> perm(batch * R * P);
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t o = 0; o < R; ++o) {
        for (std::size_t p = 0; p < P; ++p) {
          perm[(s * R + o) * P + p] = static_cast<std::int64_t>((s * P + p) * R + o);
        }
      }
    }
    y = ops.Gather(y, perm, {batch, R * P});
  }
  if (l.act == Activation::kSquare) y = ops.Square(y);
  return y;
}

// Sum over the batch of phi(x); labels is [batch, classes] in label-aware mode.
template <class Ops>
typename Ops::T EncodeGroup(Ops& ops, const UtilityModel& m, typename Ops::T x,
                            const typename Ops::T* labels, std::size_t batch) {
  for (const auto& l : m.extractor) x = ApplyLayer(ops, l, x, batch);
  if (m.label_aware) {
    const std::size_t E = m.extractor.empty() ? m.input_dim : m.extractor.back().output_size();
    const std::size_t C = static_cast<std::size_t>(m.classes);
    std::vector<std::int64_t> idx(batch * (E + C));
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t j = 0; j < E + C; ++j) {
        idx[s * (E + C) + j] = static_cast<std::int64_t>(j < E ? s * E + j : batch * E + s * C + (j - E));
      }
    }
    x = ops.Gather(ops.Concat(x, *labels), idx, {batch, E + C});
  }
  x = ApplyLayer(ops, m.trans, x, batch);
  return ops.SumRows(x);
}

std::vector<double> OneHot(const UtilityModel& m, const Dataset& d) {
  const std::size_t C = static_cast<std::size_t>(m.classes);
  std::vector<double> v(d.rows() * C, 0.0);
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const int y = d.labelled() ? d.y[r] : -1;
    if (y < 0 || y >= m.classes) throw Error(ErrorCode::kShape, "label-aware model needs labelled samples");
    v[r * C + static_cast<std::size_t>(y)] = 1.0;
  }
  return v;
}

}  // namespace

double FixedPointScore(const UtilityModel& m, std::span<const Dataset* const> groups) {
  m.Validate();
  const FixedPointInterpreter fp(FixCfg(64, m.fraction_bits));
  FxOps ops{fp};
  std::vector<RingTensor> reps;
  std::vector<std::size_t> counts;
  for (const Dataset* g : groups) {
    if (g->rows() == 0) continue;
    CheckSampleWidth(m, g->cols);
    const std::size_t B = g->rows();
    RingTensor x = fp.Encode(g->x, {B, g->cols});
    std::optional<RingTensor> lab;
    if (m.label_aware) lab = fp.Encode(OneHot(m, *g), {B, static_cast<std::size_t>(m.classes)});
    reps.push_back(EncodeGroup(ops, m, std::move(x), lab ? &*lab : nullptr, B));
    counts.push_back(B);
  }
  if (reps.empty()) return Logit(m.empty_utility);
  RingTensor y = fp.MeanReadout(reps, counts);
  for (const auto& l : m.network) {
    y = fp.MatVecAffine(fp.Encode(l.w, {l.rows(), l.cols()}), y, fp.Encode(l.b, {l.rows()}));
    if (l.act == Activation::kSquare) y = fp.Square(y);
  }
  return fp.Decode(y)[0];
}

OwnerRepr EncodeOwner(Engine& e, const UtilityModel& m, PartyId owner, const Dataset& data) {
  if (e.cfg().f() != m.fraction_bits) throw Error(ErrorCode::kParameter, "engine fraction bits differ from the model");
  if (data.rows() == 0) throw Error(ErrorCode::kParameter, "owner has no samples");
  CheckSampleWidth(m, data.cols);
  e.network().SetPhase(Phase::kTwoParty);
  SecureOps ops{e, {kBuyer, owner}};
  const std::size_t B = data.rows();
  SharedTensor x = e.InputTensor(owner, data.x, {B, data.cols}, ops.holders);
  std::optional<SharedTensor> lab;
  if (m.label_aware) {
    lab = e.InputTensor(owner, OneHot(m, data), {B, static_cast<std::size_t>(m.classes)}, ops.holders);
  }
  return {owner, B, EncodeGroup(ops, m, std::move(x), lab ? &*lab : nullptr, B)};
}

SecureMapper::SecureMapper(Engine& e, const UtilityModel& m, std::vector<PartyId> parties)
    : e_(e), m_(m), parties_(std::move(parties)) {
  if (parties_.empty() || parties_.front() != kBuyer) {
    throw Error(ErrorCode::kParameter, "mapping parties must start with the buyer");
  }
  e_.network().SetPhase(Phase::kMultiParty);
  for (const auto& l : m_.network) {
    w_.push_back(e_.InputTensor(kBuyer, l.w, {l.rows(), l.cols()}, parties_));
    b_.push_back(e_.InputTensor(kBuyer, l.b, {l.rows()}, parties_));
  }
}

SharedTensor SecureMapper::Lift(const OwnerRepr& r) {
  e_.network().SetPhase(Phase::kMultiParty);
  return e_.Convert2ToN(r.sum, parties_);
}

double SecureMapper::Score(std::span<const SharedTensor> reps, std::span<const std::size_t> counts) {
  if (reps.empty()) return Logit(m_.empty_utility);
  e_.network().SetPhase(Phase::kMultiParty);
  SharedTensor y = e_.MeanReadout(reps, counts);
  for (std::size_t i = 0; i < m_.network.size(); ++i) {
    y = e_.MatVecAffine(w_[i], y, b_[i]);
    if (m_.network[i].act == Activation::kSquare) y = e_.Square(y);
  }
  const auto opened = e_.Open(y, kBuyer);
  return FxDecode(RingVal{opened.at(0)}, e_.cfg());
}

double MpcScoreCoalition(Engine& e, const UtilityModel& m, std::span<const Dataset* const> groups) {
  std::vector<PartyId> parties{kBuyer};
  for (std::size_t i = 0; i < groups.size(); ++i) parties.push_back(static_cast<PartyId>(i + 1));
  std::vector<OwnerRepr> enc;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i]->rows() > 0) enc.push_back(EncodeOwner(e, m, static_cast<PartyId>(i + 1), *groups[i]));
  }
  if (enc.empty()) return Logit(m.empty_utility);
  if (parties.size() < 2) throw Error(ErrorCode::kParameter, "no owners");
  SecureMapper mapper(e, m, parties);
  std::vector<SharedTensor> reps;
  std::vector<std::size_t> counts;
  for (const auto& r : enc) {
    reps.push_back(mapper.Lift(r));
    counts.push_back(r.count);
  }
  return mapper.Score(reps, counts);
}

}  // namespace shapmkt
