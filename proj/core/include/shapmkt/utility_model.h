#pragma once

// Data utility model U = f_DS o G_f over sets of samples: architecture,
// plaintext training, fixed-point and secure inference, model files.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "shapmkt/dataset.h"
#include "shapmkt/mpc_engine.h"
#include "shapmkt/rng.h"

namespace shapmkt {

enum class LayerKind { kDense, kConv };
enum class Activation { kNone, kSquare };

// Dense: w is [out, in]. Conv: w is [out_c, in_c * kernel * kernel] applied to
// image columns; activations are laid out channel-major (c, h, w).
struct Layer {
  LayerKind kind = LayerKind::kDense;
  std::size_t in = 0, out = 0;
  std::size_t in_c = 0, in_h = 0, in_w = 0, out_c = 0, kernel = 0, stride = 1, pad = 0;
  Activation act = Activation::kNone;
  std::vector<double> w, b;

  std::size_t out_h() const;
  std::size_t out_w() const;
  std::size_t positions() const;  // 1 for dense
  std::size_t rows() const;       // weight rows
  std::size_t cols() const;       // weight columns
  std::size_t input_size() const;
  std::size_t output_size() const;
  bool operator==(const Layer&) const = default;
};

Layer DenseLayer(std::size_t in, std::size_t out, Activation act = Activation::kNone);
Layer ConvLayer(std::size_t in_c, std::size_t in_h, std::size_t in_w, std::size_t out_c,
                std::size_t kernel, std::size_t stride, std::size_t pad,
                Activation act = Activation::kNone);

// Flat input index feeding each (position, column) of the image-to-column
// matrix; -1 marks padding.
std::vector<std::int64_t> Im2ColIndex(const Layer& l);

struct UtilityModel {
  std::string preset;
  std::size_t input_dim = 0;
  std::vector<Layer> extractor;  // G_f
  Layer trans;                   // f_DS^trans
  std::vector<Layer> network;    // f_DS^network, after the mean readout
  bool label_aware = false;      // append the one-hot label to G_f(x)
  int classes = 2;
  bool final_sigmoid = true;
  unsigned fraction_bits = 16;
  double empty_utility = 0.5;  // u of the empty coalition

  std::size_t embedding_dim() const;  // G_f output, plus the label width
  std::size_t repr_dim() const;
  std::size_t parameter_count() const;
  // Throws a validation error naming the first layer that breaks the chain.
  void Validate() const;
  bool operator==(const UtilityModel&) const = default;
};

struct PresetOptions {
  std::size_t input_dim = 10;  // mlp-synthetic only
  int classes = 10;
  bool label_aware = false;
  std::uint64_t seed = 1;
};

// mnist-like, cifar-like or mlp-synthetic, randomly initialised.
UtilityModel BuildPreset(const std::string& name, const PresetOptions& opt = {});

// phi(x) = f_DS^trans(G_f(x)); label < 0 means unlabelled.
std::vector<double> ForwardRepr(const UtilityModel& m, std::span<const double> x, int label = -1);

struct CoalitionScore {
  double pre_sigmoid = 0.0;
  double utility = 0.0;
};

// Float score over the union of `groups`. No samples gives u_empty.
CoalitionScore ScoreCoalition(const UtilityModel& m, std::span<const Dataset* const> groups);
CoalitionScore ScoreCoalition(const UtilityModel& m, const Dataset& samples);
double Sigmoid(double z);

// Alg. 1 output: sampled subsets of a labelled pool with their utilities.
struct SdsEntry {
  std::vector<std::size_t> members;  // indices into pool
  double utility = 0.0;
};

struct UtilityDataset {
  Dataset pool;
  Dataset validation;
  std::vector<SdsEntry> entries;

  std::size_t M() const { return entries.size(); }
  void Validate() const;
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t inner_steps = 20;
  double lr_ds = 0.05;
  double lr_gf = 0.01;
  std::size_t batch_size = 16;
  std::uint64_t seed = 7;
  double clip = 5.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  void Validate() const;
};

struct TrainResult {
  UtilityModel model;
  std::vector<double> loss_history;  // full-set mean squared error after each epoch
};

TrainResult TrainUtility(UtilityModel m, const UtilityDataset& sds, const TrainConfig& cfg);

// Parameters in a fixed order: extractor, trans, network; per layer w then b.
std::vector<double> FlattenParameters(const UtilityModel& m);
void SetParameters(UtilityModel& m, std::span<const double> p);

// Mean squared utility error over `entries` plus (weight_decay / 2) * |w|^2
// over weight matrices. Fills the analytic gradient when `grad` is set.
double Objective(const UtilityModel& m, const UtilityDataset& sds,
                 std::span<const std::size_t> entries, double weight_decay,
                 std::vector<double>* grad);

// Mean squared error of sigmoid outputs over every entry.
double DatasetLoss(const UtilityModel& m, const UtilityDataset& sds);

inline constexpr const char* kModelMagic = "SHAPMKT-MODEL";
inline constexpr int kModelVersion = 1;

void WriteModel(const UtilityModel& m, std::ostream& os);
UtilityModel ReadModel(std::istream& is);
void SaveModel(const UtilityModel& m, const std::string& path);
UtilityModel LoadModel(const std::string& path);

// Fixed-point plaintext reference of the secure scoring: the same operation
// sequence on unshared ring values. Returns the decoded pre-sigmoid score.
double FixedPointScore(const UtilityModel& m, std::span<const Dataset* const> groups);

// Secure scoring. Encoding phase: buyer and one owner compute the owner's
// sum of phi in 2PC. Mapping phase: sums are lifted to all parties, averaged,
// passed through f_DS^network and opened to the buyer.
struct OwnerRepr {
  PartyId owner = 0;
  std::size_t count = 0;
  SharedTensor sum;  // two holders: buyer, owner
};

OwnerRepr EncodeOwner(Engine& e, const UtilityModel& m, PartyId owner, const Dataset& data);

class SecureMapper {
 public:
  // Buyer inputs the network weights to `parties` (buyer first).
  SecureMapper(Engine& e, const UtilityModel& m, std::vector<PartyId> parties);

  SharedTensor Lift(const OwnerRepr& r);
  // Pre-sigmoid score of the coalition formed by `reps` with `counts`
  // samples each, opened to the buyer.
  double Score(std::span<const SharedTensor> reps, std::span<const std::size_t> counts);

  const std::vector<PartyId>& parties() const { return parties_; }

 private:
  Engine& e_;
  const UtilityModel& m_;
  std::vector<PartyId> parties_;
  std::vector<SharedTensor> w_, b_;
};

// All owners in one engine; groups[i] belongs to party i + 1.
double MpcScoreCoalition(Engine& e, const UtilityModel& m, std::span<const Dataset* const> groups);

}  // namespace shapmkt
