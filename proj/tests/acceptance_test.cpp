// End-to-end acceptance battery. Each test covers one release criterion and
// prints a single status line so the full verdict is readable at a glance.

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "marcel/chem.hpp"
#include "marcel/dataset.hpp"
#include "marcel/encoders.hpp"
#include "marcel/ensemble.hpp"
#include "marcel/featurize.hpp"
#include "marcel/geometry.hpp"
#include "marcel/harness.hpp"
#include "marcel/rng.hpp"
#include "marcel/tensor.hpp"
#include "test_util.hpp"

namespace {

using namespace marcel;
using DTensor = Tensor<double>;

// Prints one status line per criterion, even when an assertion bails out early.
struct Criterion {
  Criterion(int n, const char* what) : number(n), name(what) {}

  int number;
  const char* name;
  std::string skip_note;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  ~Criterion() {
    std::string status = "pass";
    if (!skip_note.empty())
      status = "skip (" + skip_note + ")";
    else if (::testing::Test::HasFailure())
      status = "FAIL";
    std::printf("[acceptance] criterion %d, %s: %s (%.1f s)\n", number, name, status.c_str(),
                seconds());
    std::fflush(stdout);
  }
};

DTensor rand_tensor(const std::vector<int>& shape, Rng& rng, double lo, double hi,
                    bool requires_grad) {
  std::vector<double> v(static_cast<std::size_t>(detail::numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return DTensor(shape, std::move(v), requires_grad);
}

// ---------------------------------------------------------------------------
// 1. Boltzmann weights: normalization, shift invariance, temperature limits
// ---------------------------------------------------------------------------

TEST(Acceptance, BoltzmannWeightProperties) {
  Criterion crit{1, "Boltzmann weight properties"};
  Rng rng(101);
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(rng.uniform_index(40));
    std::vector<double> e(n);
    for (double& x : e) x = rng.uniform(-50.0, 50.0);

    const std::vector<double> w = boltzmann_weights(e);
    double sum = 0;
    for (double x : w) {
      ASSERT_GE(x, 0.0);
      sum += x;
    }
    ASSERT_NEAR(sum, 1.0, 1e-12);

    std::vector<double> shifted = e;
    for (double& x : shifted) x += 137.25;
    const std::vector<double> ws = boltzmann_weights(shifted);
    for (int i = 0; i < n; ++i) ASSERT_NEAR(w[i], ws[i], 1e-12);

    // hot limit over a realistic conformer energy window (a few kcal/mol):
    // kT at 1e9 K dwarfs the spread, so the weights flatten to uniform
    std::vector<double> window(n);
    for (double& x : window) x = rng.uniform(0.0, 3.0);
    const std::vector<double> hot = boltzmann_weights(window, 1e9);
    for (int i = 0; i < n; ++i) ASSERT_NEAR(hot[i], 1.0 / n, 1e-6);

    if (n >= 2) {
      // give the minimum a clear margin, then freezing must concentrate on it
      int lo = 0;
      for (int i = 1; i < n; ++i)
        if (e[i] < e[lo]) lo = i;
      std::vector<double> gapped = e;
      gapped[lo] -= 1.0;
      const std::vector<double> cold = boltzmann_weights(gapped, 1e-6);
      ASSERT_GT(cold[lo], 1.0 - 1e-6);
    }
  }
  EXPECT_LT(crit.seconds(), 5.0);
}

// ---------------------------------------------------------------------------
// 2. Geometry oracles: alignment, clustering, dedup stability
// ---------------------------------------------------------------------------

// Independent closed-form rigid-fit minimizer (quaternion eigenvalue method):
// the optimal superposition RMSD falls out of the largest eigenvalue of a 4x4
// matrix built from the covariance of the centered point sets.
double quaternion_min_rmsd(const std::vector<Vec3>& P, const std::vector<Vec3>& Q) {
  const std::size_t n = P.size();
  Vec3 pc{0, 0, 0}, qc{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    pc.x += P[i].x; pc.y += P[i].y; pc.z += P[i].z;
    qc.x += Q[i].x; qc.y += Q[i].y; qc.z += Q[i].z;
  }
  pc.x /= n; pc.y /= n; pc.z /= n;
  qc.x /= n; qc.y /= n; qc.z /= n;

  double S[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  double gp = 0, gq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p[3] = {P[i].x - pc.x, P[i].y - pc.y, P[i].z - pc.z};
    const double q[3] = {Q[i].x - qc.x, Q[i].y - qc.y, Q[i].z - qc.z};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) S[r][c] += p[r] * q[c];
    gp += p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    gq += q[0] * q[0] + q[1] * q[1] + q[2] * q[2];
  }

  Eigen::Matrix4d N = Eigen::Matrix4d::Zero();
  N(0, 0) = S[0][0] + S[1][1] + S[2][2];
  N(0, 1) = S[1][2] - S[2][1];
  N(0, 2) = S[2][0] - S[0][2];
  N(0, 3) = S[0][1] - S[1][0];
  N(1, 1) = S[0][0] - S[1][1] - S[2][2];
  N(1, 2) = S[0][1] + S[1][0];
  N(1, 3) = S[2][0] + S[0][2];
  N(2, 2) = -S[0][0] + S[1][1] - S[2][2];
  N(2, 3) = S[1][2] + S[2][1];
  N(3, 3) = -S[0][0] - S[1][1] + S[2][2];
  for (int r = 1; r < 4; ++r)
    for (int c = 0; c < r; ++c) N(r, c) = N(c, r);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(N);
  const double lambda = eig.eigenvalues()(3);  // largest
  const double sq = (gp + gq - 2.0 * lambda) / static_cast<double>(n);
  return std::sqrt(std::max(0.0, sq));
}

// RMSD after applying a given rotation and the centroid-matching translation.
double rmsd_under_rotation(const std::vector<Vec3>& P, const std::vector<Vec3>& Q,
                           const std::array<std::array<double, 3>, 3>& R) {
  const std::size_t n = P.size();
  Vec3 pc{0, 0, 0}, qc{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 rp = testutil::apply_rotation(R, P[i]);
    pc.x += rp.x; pc.y += rp.y; pc.z += rp.z;
    qc.x += Q[i].x; qc.y += Q[i].y; qc.z += Q[i].z;
  }
  pc.x /= n; pc.y /= n; pc.z /= n;
  qc.x /= n; qc.y /= n; qc.z /= n;
  double se = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 rp = testutil::apply_rotation(R, P[i]);
    const double dx = rp.x - pc.x + qc.x - Q[i].x;
    const double dy = rp.y - pc.y + qc.y - Q[i].y;
    const double dz = rp.z - pc.z + qc.z - Q[i].z;
    se += dx * dx + dy * dy + dz * dz;
  }
  return std::sqrt(se / static_cast<double>(n));
}

// Plainly-written sphere exclusion, kept separate from the library code:
// promote the unassigned point with the most unassigned in-threshold
// neighbors (ties to the lowest index), absorb its neighborhood, repeat.
ClusterAssignment reference_sphere_exclusion(const std::vector<std::vector<double>>& d,
                                             double threshold) {
  const int n = static_cast<int>(d.size());
  std::vector<bool> used(n, false);
  ClusterAssignment out;
  out.threshold = threshold;
  int left = n;
  while (left > 0) {
    int pick = -1, most = -1;
    for (int i = 0; i < n; ++i) {
      if (used[i]) continue;
      int count = 0;
      for (int j = 0; j < n; ++j)
        if (j != i && !used[j] && d[i][j] <= threshold) ++count;
      if (count > most) {
        most = count;
        pick = i;
      }
    }
    std::vector<int> members;
    for (int j = 0; j < n; ++j)
      if (!used[j] && (j == pick || d[pick][j] <= threshold)) members.push_back(j);
    for (int j : members) {
      used[j] = true;
      --left;
    }
    out.clusters.emplace_back(pick, std::move(members));
  }
  return out;
}

TEST(Acceptance, GeometryOracles) {
  Criterion crit{2, "geometry oracles and dedup stability"};
  Rng rng(202);

  // alignment vs the independent closed-form minimizer
  for (int t = 0; t < 100; ++t) {
    const int n = 4 + static_cast<int>(rng.uniform_index(7));
    const std::vector<Vec3> P = testutil::random_points(n, rng);
    const auto R = testutil::random_rotation(rng);
    const Vec3 shift{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    std::vector<Vec3> Q = testutil::transform(P, R, shift);
    for (Vec3& q : Q) {
      q.x += rng.normal() * 0.05;
      q.y += rng.normal() * 0.05;
      q.z += rng.normal() * 0.05;
    }
    EXPECT_NEAR(kabsch_align(P, Q).rmsd, quaternion_min_rmsd(P, Q), 1e-6);
  }

  // random rotation search can never beat the closed form
  for (int t = 0; t < 5; ++t) {
    const int n = 4 + static_cast<int>(rng.uniform_index(7));
    const std::vector<Vec3> P = testutil::random_points(n, rng);
    std::vector<Vec3> Q = testutil::random_points(n, rng);
    const double exact = kabsch_align(P, Q).rmsd;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 2000; ++k)
      best = std::min(best, rmsd_under_rotation(P, Q, testutil::random_rotation(rng)));
    EXPECT_GE(best, exact - 1e-9);
  }

  // clustering vs the reference implementation, exact on every instance
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + static_cast<int>(rng.uniform_index(29));
    const std::vector<Vec3> pts = testutil::random_points(n, rng, 1.5);
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d[i][j] = distance(pts[i], pts[j]);
    const double threshold = rng.uniform(0.5, 3.0);

    const ClusterAssignment got = butina_cluster(d, threshold);
    const ClusterAssignment want = reference_sphere_exclusion(d, threshold);
    ASSERT_EQ(got.clusters.size(), want.clusters.size()) << "instance " << t;
    for (std::size_t c = 0; c < got.clusters.size(); ++c) {
      ASSERT_EQ(got.clusters[c].first, want.clusters[c].first) << "instance " << t;
      ASSERT_EQ(got.clusters[c].second, want.clusters[c].second) << "instance " << t;
    }
  }

  // dedup is a no-op on its own output: built from well-separated conformer
  // groups so survivors stay outside each other's threshold
  const double threshold = 0.5;
  for (int t = 0; t < 100; ++t) {
    const int n_atoms = 4 + t % 4;
    std::vector<std::string> elements;
    const char* pool[4] = {"C", "C", "O", "N"};
    for (int i = 0; i < n_atoms; ++i) elements.push_back(pool[(t + i) % 4]);
    std::vector<std::tuple<int, int, BondOrder>> bonds;
    for (int i = 0; i + 1 < n_atoms; ++i) bonds.emplace_back(i, i + 1, BondOrder::Single);
    const Molecule mol =
        testutil::make_molecule(elements, bonds, "dedup-" + std::to_string(t));

    const int k = 2 + t % 3;
    std::vector<Conformer> centers;
    double scale = 2.0;
    while (static_cast<int>(centers.size()) < k) {
      Conformer cand;
      cand.coords = testutil::random_points(n_atoms, rng, scale);
      bool separated = true;
      for (const Conformer& c : centers)
        if (symmetry_aware_rmsd(mol, cand, c) < 4.0 * threshold) separated = false;
      if (separated)
        centers.push_back(std::move(cand));
      else
        scale *= 1.2;  // spread further until the groups cannot collide
    }

    ConformerEnsemble ens;
    ens.molecule = mol;
    for (int c = 0; c < k; ++c) {
      const int copies = 2 + static_cast<int>(rng.uniform_index(3));
      for (int j = 0; j < copies; ++j) {
        Conformer conf = centers[c];
        for (Vec3& p : conf.coords) {
          p.x += rng.uniform(-threshold / 40, threshold / 40);
          p.y += rng.uniform(-threshold / 40, threshold / 40);
          p.z += rng.uniform(-threshold / 40, threshold / 40);
        }
        conf.energy = rng.uniform(0.0, 5.0);
        ens.conformers.push_back(std::move(conf));
      }
    }

    const ConformerEnsemble once = deduplicate_ensemble(ens, threshold);
    ASSERT_EQ(static_cast<int>(once.conformers.size()), k) << "ensemble " << t;
    const ConformerEnsemble twice = deduplicate_ensemble(once, threshold);
    ASSERT_EQ(twice.conformers.size(), once.conformers.size()) << "ensemble " << t;
    for (std::size_t c = 0; c < once.conformers.size(); ++c) {
      ASSERT_EQ(twice.conformers[c].energy, once.conformers[c].energy);
      for (std::size_t a = 0; a < once.conformers[c].coords.size(); ++a) {
        ASSERT_EQ(twice.conformers[c].coords[a].x, once.conformers[c].coords[a].x);
        ASSERT_EQ(twice.conformers[c].coords[a].y, once.conformers[c].coords[a].y);
        ASSERT_EQ(twice.conformers[c].coords[a].z, once.conformers[c].coords[a].z);
      }
      ASSERT_NEAR((*twice.weights)[c], (*once.weights)[c], 1e-12);
    }
  }
  EXPECT_LT(crit.seconds(), 120.0);
}

// ---------------------------------------------------------------------------
// 3. Gradients: every block and the full predict path vs finite differences
// ---------------------------------------------------------------------------

// Relative mismatch with the scale floored: tensors whose true gradient is
// essentially zero are judged absolutely instead of against FD roundoff.
template <typename F>
void expect_grads_match(F&& make_loss, std::vector<DTensor> inputs, const char* what) {
  DTensor loss = make_loss();
  backward(loss, inputs);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<double> analytic = inputs[k].grad();
    const std::vector<double> fd =
        finite_difference([&] { return make_loss().item(); }, inputs[k], 1e-5);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      num = std::max(num, std::abs(analytic[i] - fd[i]));
      den = std::max(den, std::abs(fd[i]));
    }
    EXPECT_LT(num / std::max(den, 1e-3), 1e-4) << what << ", tensor " << k;
  }
}

Sample toy_multiconformer_sample(int n_conformers, Rng& rng, double target) {
  ConformerEnsemble ens;
  ens.molecule = testutil::make_molecule(
      {"C", "C", "O", "N"},
      {{0, 1, BondOrder::Single}, {1, 2, BondOrder::Single}, {2, 3, BondOrder::Single}}, "toy");
  for (int c = 0; c < n_conformers; ++c) {
    Conformer conf;
    conf.coords = testutil::random_points(4, rng, 1.2);
    conf.energy = rng.uniform(0.0, 2.0);
    ens.conformers.push_back(std::move(conf));
  }
  Sample s;
  s.ensembles.emplace_back("molecule", std::move(ens));
  s.targets["y"] = target;
  return s;
}

TEST(Acceptance, GradientChecks) {
  Criterion crit{3, "gradients match finite differences"};
  Rng rng(303);
  EncoderConfig ec;
  ec.hidden_dim = 6;
  ec.num_layers = 2;
  ec.num_rbf = 8;
  ec.cutoff = 5.0;

  // 2D encoder block
  {
    const Molecule mol = testutil::make_molecule(
        {"C", "C", "O", "N", "H"},
        {{0, 1, BondOrder::Single}, {1, 2, BondOrder::Double}, {2, 3, BondOrder::Single},
         {0, 4, BondOrder::Single}},
        "grad-2d");
    const FeatureMatrices graph = featurize_molecule(mol);
    const GinEncoder<double> enc(ec, rng);
    std::vector<DTensor> params;
    enc.collect_params(params);
    expect_grads_match([&] { return sum(enc.encode(graph)); }, params, "2D encoder");
  }

  // 3D encoder block
  {
    const Molecule mol = testutil::make_molecule(
        {"C", "C", "O", "N"},
        {{0, 1, BondOrder::Single}, {1, 2, BondOrder::Single}, {2, 3, BondOrder::Single}},
        "grad-3d");
    Conformer conf;
    conf.coords = testutil::random_points(4, rng, 1.2);
    const SchNetInput<double> input = prepare_schnet_input<double>(mol, {&conf}, ec);
    const SchNetEncoder<double> enc(ec, rng);
    std::vector<DTensor> params;
    enc.collect_params(params);
    expect_grads_match([&] { return sum(enc.encode(input)); }, params, "3D encoder");
  }

  // set encoders over conformer embeddings
  for (const SetEncoderVariant variant :
       {SetEncoderVariant::Mean, SetEncoderVariant::DeepSets, SetEncoderVariant::Attention}) {
    const SetEncoder<double> enc(variant, 5, rng);
    DTensor z = rand_tensor({4, 5}, rng, -1, 1, true);
    std::vector<DTensor> inputs = {z};
    enc.collect_params(inputs);
    expect_grads_match([&] { return sum(enc(z)); }, inputs,
                       "set encoder");
  }

  // full predict paths
  struct Case {
    const char* label;
    ModelKind model;
    Strategy strategy;
    SetEncoderVariant set_encoder;
  };
  const Case cases[] = {
      {"2D single", ModelKind::Gin, Strategy::Single, SetEncoderVariant::Mean},
      {"3D single", ModelKind::SchNet, Strategy::Single, SetEncoderVariant::Mean},
      {"3D sampling", ModelKind::SchNet, Strategy::Sampling, SetEncoderVariant::Mean},
      {"3D set mean", ModelKind::SchNet, Strategy::SetEncoderStrategy, SetEncoderVariant::Mean},
      {"3D set deepsets", ModelKind::SchNet, Strategy::SetEncoderStrategy,
       SetEncoderVariant::DeepSets},
      {"3D set attention", ModelKind::SchNet, Strategy::SetEncoderStrategy,
       SetEncoderVariant::Attention},
  };
  for (const Case& c : cases) {
    EnsembleModelConfig mc;
    mc.model = c.model;
    mc.encoder = ec;
    mc.encoder.hidden_dim = 4;
    mc.strategy = c.strategy;
    mc.set_encoder = c.set_encoder;
    const Sample sample = toy_multiconformer_sample(3, rng, 0.7);
    const PreparedSample<double> prep = prepare_sample<double>(sample, "y", mc);
    const Predictor<double> model(mc, 1, rng);
    const std::vector<int> choice{1};
    auto loss = [&] {
      const DTensor pred =
          model.forward(prep, c.strategy == Strategy::Sampling ? &choice : nullptr);
      const DTensor err = add(pred, -0.7);
      return mul(err, err);
    };
    expect_grads_match(loss, model.params(), c.label);
  }

  // two-tower reaction path
  {
    EnsembleModelConfig mc;
    mc.model = ModelKind::SchNet;
    mc.encoder = ec;
    mc.encoder.hidden_dim = 4;
    Sample reaction = toy_multiconformer_sample(2, rng, 0.3);
    Sample other = toy_multiconformer_sample(2, rng, 0.0);
    reaction.ensembles.emplace_back("partner", other.ensembles[0].second);
    const PreparedSample<double> prep = prepare_sample<double>(reaction, "y", mc);
    const Predictor<double> model(mc, 2, rng);
    auto loss = [&] {
      const DTensor err = add(model.forward(prep), -0.3);
      return mul(err, err);
    };
    expect_grads_match(loss, model.params(), "two-tower");
  }
  EXPECT_LT(crit.seconds(), 120.0);
}

// ---------------------------------------------------------------------------
// 4. Symmetries: rigid motions and atom reordering cannot change outputs
// ---------------------------------------------------------------------------

TEST(Acceptance, SymmetryInvariance) {
  Criterion crit{4, "rigid-motion and permutation invariance"};
  Rng rng(404);

  // 3D encoder, 32-bit, 100 random rigid motions
  {
    EncoderConfig ec;
    ec.hidden_dim = 16;
    ec.num_layers = 2;
    ec.num_rbf = 16;
    ec.cutoff = 5.0;
    std::vector<std::string> elements;
    const char* pool[5] = {"C", "N", "O", "H", "F"};
    for (int i = 0; i < 10; ++i) elements.push_back(pool[i % 5]);
    std::vector<std::tuple<int, int, BondOrder>> bonds;
    for (int i = 0; i + 1 < 10; ++i) bonds.emplace_back(i, i + 1, BondOrder::Single);
    const Molecule mol = testutil::make_molecule(elements, bonds, "sym-3d");
    Conformer conf;
    conf.coords = testutil::random_points(10, rng, 1.0);

    const SchNetEncoder<float> enc(ec, rng);
    const std::vector<float> base =
        enc.encode_one(prepare_schnet_input<float>(mol, {&conf}, ec)).data();
    for (int t = 0; t < 100; ++t) {
      Conformer moved;
      moved.coords = testutil::transform(conf.coords, testutil::random_rotation(rng),
                                         {rng.uniform(-20, 20), rng.uniform(-20, 20),
                                          rng.uniform(-20, 20)});
      const std::vector<float> out =
          enc.encode_one(prepare_schnet_input<float>(mol, {&moved}, ec)).data();
      for (std::size_t i = 0; i < base.size(); ++i)
        ASSERT_NEAR(out[i], base[i], 1e-5) << "transform " << t;
    }
  }

  // 2D encoder, atom reordering, 64-bit
  {
    EncoderConfig ec;
    ec.hidden_dim = 8;
    ec.num_layers = 2;
    const Molecule mol = testutil::make_molecule(
        {"C", "C", "O", "N", "H", "C"},
        {{0, 1, BondOrder::Single}, {1, 2, BondOrder::Double}, {2, 3, BondOrder::Single},
         {3, 4, BondOrder::Single}, {1, 5, BondOrder::Single}},
        "sym-2d");
    const GinEncoder<double> enc(ec, rng);
    const std::vector<double> base = enc.encode(featurize_molecule(mol)).data();
    for (int t = 0; t < 20; ++t) {
      const std::vector<int> perm = testutil::random_permutation(mol.atom_count(), rng);
      Molecule shuffled = testutil::permute_molecule(mol, perm);
      compute_derived_fields(shuffled);
      const std::vector<double> out = enc.encode(featurize_molecule(shuffled)).data();
      for (std::size_t i = 0; i < base.size(); ++i)
        ASSERT_NEAR(out[i], base[i], 1e-6) << "permutation " << t;
    }
  }

  // set encoders, conformer reordering, 64-bit
  for (const SetEncoderVariant variant :
       {SetEncoderVariant::Mean, SetEncoderVariant::DeepSets, SetEncoderVariant::Attention}) {
    const SetEncoder<double> enc(variant, 8, rng);
    const DTensor z = rand_tensor({6, 8}, rng, -1, 1, false);
    const std::vector<double> base = enc(z).data();
    for (int t = 0; t < 20; ++t) {
      const std::vector<int> perm = testutil::random_permutation(6, rng);
      std::vector<double> rows(6 * 8);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 8; ++j) rows[perm[i] * 8 + j] = z.data()[i * 8 + j];
      const std::vector<double> out = enc(DTensor({6, 8}, rows)).data();
      for (std::size_t i = 0; i < base.size(); ++i)
        ASSERT_NEAR(out[i], base[i], 1e-6) << "permutation " << t;
    }
  }
  EXPECT_LT(crit.seconds(), 60.0);
}

// ---------------------------------------------------------------------------
// 5. Protocol: split shape, patience, repeat selection
// ---------------------------------------------------------------------------

LoadedDataset flat_target_dataset(int n_samples, double target) {
  LoadedDataset data;
  for (int s = 0; s < n_samples; ++s) {
    ConformerEnsemble ens;
    ens.molecule = testutil::make_molecule(
        {"C", "C", "C"}, {{0, 1, BondOrder::Single}, {1, 2, BondOrder::Single}},
        "flat-" + std::to_string(s));
    Conformer c;
    c.coords = {{0, 0, 0}, {1.5, 0, 0}, {3.0, 0, 0}};
    ens.conformers.push_back(c);
    Sample sample;
    sample.ensembles.emplace_back("molecule", std::move(ens));
    sample.targets["y"] = target;
    data.samples.push_back(std::move(sample));
  }
  return data;
}

TrainConfig small_train_config() {
  TrainConfig cfg;
  cfg.dataset = "synthetic";
  cfg.task = "y";
  cfg.model = "schnet";
  cfg.hidden_dim = 8;
  cfg.num_layers = 1;
  cfg.num_rbf = 8;
  cfg.epochs = 40;
  cfg.patience = 200;
  cfg.repeats = 1;
  cfg.lr = 0.02;
  cfg.batch_size = 4;
  cfg.seed = 11;
  return cfg;
}

TEST(Acceptance, ProtocolFidelity) {
  Criterion crit{5, "training protocol fidelity"};

  // splits partition the index range with floor-rule sizes
  Rng rng(505);
  for (int t = 0; t < 200; ++t) {
    const int n = 10 + static_cast<int>(rng.uniform_index(400));
    const SplitSpec s = split_dataset(n, rng.next_u64());
    ASSERT_EQ(static_cast<int>(s.train.size()), 7 * n / 10);
    ASSERT_EQ(static_cast<int>(s.val.size()), n / 10);
    std::vector<int> all = s.train;
    all.insert(all.end(), s.val.begin(), s.val.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    std::vector<int> want(n);
    std::iota(want.begin(), want.end(), 0);
    ASSERT_EQ(all, want);
  }
  EXPECT_THROW(split_dataset(9, 0), DatasetTooSmall);

  // the stall counter must run a full 200 epochs before stopping; a step too
  // small to change float parameters makes every epoch non-improving
  {
    const LoadedDataset data = flat_target_dataset(12, 0.5);
    TrainConfig cfg = small_train_config();
    cfg.lr = 1e-300;
    cfg.epochs = 300;
    cfg.patience = 200;
    const TrainOutcome out = train_model(data, cfg, 5, split_dataset(12, cfg.seed));
    EXPECT_EQ(out.epochs_run, 201);
  }

  // repeat selection keeps the lowest-validation run
  {
    const LoadedDataset data = flat_target_dataset(12, 0.5);
    TrainConfig cfg = small_train_config();
    cfg.repeats = 3;
    const ExperimentResult result = run_experiment(data, cfg, "synthetic");
    ASSERT_EQ(result.records.size(), 3u);
    int argmin = 0;
    for (int r = 1; r < 3; ++r)
      if (result.records[r].val_mae < result.records[argmin].val_mae) argmin = r;
    EXPECT_EQ(result.selected, argmin);
  }
  EXPECT_LT(crit.seconds(), 60.0);
}

// ---------------------------------------------------------------------------
// 6. Ensemble payoff: aggregating conformers beats the single-conformer model
// ---------------------------------------------------------------------------

double radius_of_gyration(const std::vector<Vec3>& pts) {
  Vec3 c{0, 0, 0};
  for (const Vec3& p : pts) {
    c.x += p.x;
    c.y += p.y;
    c.z += p.z;
  }
  c.x /= pts.size();
  c.y /= pts.size();
  c.z /= pts.size();
  double acc = 0;
  for (const Vec3& p : pts) {
    const double dx = p.x - c.x, dy = p.y - c.y, dz = p.z - c.z;
    acc += dx * dx + dy * dy + dz * dz;
  }
  return std::sqrt(acc / pts.size());
}

// Random chain walk whose stiffness varies per conformer, so the ensemble
// spans compact and extended shapes with very different radii of gyration.
Conformer chain_walk(int n_atoms, Rng& rng) {
  Conformer conf;
  const double persist = rng.uniform(0.0, 2.5);
  Vec3 pos{0, 0, 0}, dir{1, 0, 0};
  conf.coords.push_back(pos);
  for (int i = 1; i < n_atoms; ++i) {
    Vec3 step{persist * dir.x + rng.normal(), persist * dir.y + rng.normal(),
              persist * dir.z + rng.normal()};
    const double norm =
        std::sqrt(step.x * step.x + step.y * step.y + step.z * step.z) + 1e-12;
    dir = {step.x / norm, step.y / norm, step.z / norm};
    pos = {pos.x + 1.5 * dir.x, pos.y + 1.5 * dir.y, pos.z + 1.5 * dir.z};
    conf.coords.push_back(pos);
  }
  conf.energy = rng.uniform(0.0, 1.2);
  return conf;
}

// Target: ensemble Boltzmann average of the radius of gyration. A model that
// sees one conformer cannot know the rest of the ensemble; one that sees all
// of them can.
LoadedDataset shape_average_dataset(int n_mols, int n_confs, int min_atoms, int max_atoms,
                                    std::uint64_t seed) {
  LoadedDataset data;
  Rng rng(seed);
  const int span = max_atoms - min_atoms + 1;
  for (int m = 0; m < n_mols; ++m) {
    const int n_atoms = min_atoms + m % span;
    ConformerEnsemble ens;
    std::vector<std::string> elements(n_atoms, "C");
    std::vector<std::tuple<int, int, BondOrder>> bonds;
    for (int i = 0; i + 1 < n_atoms; ++i) bonds.emplace_back(i, i + 1, BondOrder::Single);
    ens.molecule = testutil::make_molecule(elements, bonds, "shape-" + std::to_string(m));
    std::vector<double> energies, rg;
    for (int c = 0; c < n_confs; ++c) {
      ens.conformers.push_back(chain_walk(n_atoms, rng));
      energies.push_back(ens.conformers.back().energy);
      rg.push_back(radius_of_gyration(ens.conformers.back().coords));
    }
    const std::vector<double> w = boltzmann_weights(energies);
    Sample sample;
    sample.targets["y"] = boltzmann_average(rg, w);
    sample.ensembles.emplace_back("molecule", std::move(ens));
    data.samples.push_back(std::move(sample));
  }
  return data;
}

TEST(Acceptance, EnsembleEncoderBeatsSingleConformer) {
  Criterion crit{6, "conformer aggregation beats single-conformer baseline"};
  const LoadedDataset data = shape_average_dataset(500, 8, 4, 7, 606);

  TrainConfig base;
  base.dataset = "synthetic";
  base.task = "y";
  base.model = "schnet";
  base.hidden_dim = 16;
  base.num_layers = 1;
  base.num_rbf = 8;
  base.cutoff = 5.0;
  base.epochs = 150;
  base.patience = 200;
  base.repeats = 1;
  base.lr = 0.01;
  base.batch_size = 32;

  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SplitSpec split = split_dataset(500, seed);
    TrainConfig single = base;
    single.strategy = "single";
    TrainConfig deepsets = base;
    deepsets.strategy = "set_encoder";
    deepsets.set_encoder = "deepsets";

    const TrainOutcome a = train_model(data, single, derive_seed(seed, 7), split);
    const TrainOutcome b = train_model(data, deepsets, derive_seed(seed, 7), split);
    ASSERT_FALSE(a.abort_reason.has_value());
    ASSERT_FALSE(b.abort_reason.has_value());
    if (b.test_mae < a.test_mae) ++wins;
    std::printf("  seed %llu: single %.4f, deepsets %.4f\n",
                static_cast<unsigned long long>(seed), a.test_mae, b.test_mae);
  }
  EXPECT_GE(wins, 4) << "conformer-set encoder won only " << wins << "/5 seeds";
  EXPECT_LT(crit.seconds(), 1800.0);
}

// ---------------------------------------------------------------------------
// 7. Evaluation schemes for a sampling-trained model
// ---------------------------------------------------------------------------

TEST(Acceptance, EvaluationSchemeConsistency) {
  Criterion crit{7, "evaluation scheme consistency"};
  const LoadedDataset data = shape_average_dataset(150, 6, 4, 6, 707);

  TrainConfig cfg;
  cfg.dataset = "synthetic";
  cfg.task = "y";
  cfg.model = "schnet";
  cfg.strategy = "sampling";
  cfg.hidden_dim = 16;
  cfg.num_layers = 1;
  cfg.num_rbf = 8;
  cfg.epochs = 60;
  cfg.patience = 200;
  cfg.repeats = 1;
  cfg.lr = 0.01;
  cfg.batch_size = 16;

  double fixed_total = 0, random_total = 0;
  bool checked_mean_identity = false;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SplitSpec split = split_dataset(150, seed);
    const std::uint64_t run_seed = derive_seed(seed, 3);
    const TrainOutcome out = train_model(data, cfg, run_seed, split);
    ASSERT_FALSE(out.abort_reason.has_value());

    // rebuild the trained predictor from its persisted parameters
    const EnsembleModelConfig mc = model_config_from(cfg, run_seed);
    std::vector<PreparedSample<float>> prepared;
    for (const Sample& s : data.samples) prepared.push_back(prepare_sample<float>(s, "y", mc));
    Rng init_rng(derive_seed(run_seed, 0x17));
    Predictor<float> model(mc, 1, init_rng);
    std::vector<Tensor<float>> params = model.params();
    ASSERT_EQ(params.size(), out.neural_params.size());
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < out.neural_params[k].size(); ++i)
        params[k].data()[i] = static_cast<float>(out.neural_params[k][i]);

    // averaging over every conformer equals the mean of per-conformer passes
    if (!checked_mean_identity) {
      Rng unused(0);
      for (int t = 0; t < 5; ++t) {
        const PreparedSample<float>& prep = prepared[split.test[t]];
        double mean_of_each = 0;
        for (int c = 0; c < prep.roles[0].n_conformers; ++c) {
          const std::vector<int> choice{c};
          mean_of_each += model.predict(prep, &choice);
        }
        mean_of_each /= prep.roles[0].n_conformers;
        const double averaged = evaluate_scheme(model, prep, EvalScheme::All, unused);
        EXPECT_NEAR(averaged, mean_of_each, 1e-6);
      }
      checked_mean_identity = true;
    }

    // lowest-energy evaluation vs a uniformly drawn conformer
    Rng draw(derive_seed(run_seed, 0xD1CE));
    std::vector<double> fixed_preds, random_preds, want;
    for (int i : split.test) {
      fixed_preds.push_back(evaluate_scheme(model, prepared[i], EvalScheme::Fixed, draw));
      random_preds.push_back(evaluate_scheme(model, prepared[i], EvalScheme::Random, draw));
      want.push_back(prepared[i].target);
    }
    fixed_total += evaluate_mae(fixed_preds, want);
    random_total += evaluate_mae(random_preds, want);
  }
  std::printf("  fixed MAE %.4f vs random MAE %.4f (5-seed average)\n", fixed_total / 5,
              random_total / 5);
  EXPECT_LE(fixed_total, random_total);
}

// ---------------------------------------------------------------------------
// 8. Released dataset statistics (needs the public data on disk)
// ---------------------------------------------------------------------------

TEST(Acceptance, ReleasedDatasetStatistics) {
  Criterion crit{8, "released dataset statistics"};
  struct Expected {
    const char* label;
    std::vector<std::string> manifest_names;
    std::size_t molecules;
    std::size_t conformers;
  };
  const std::vector<Expected> expected = {
      {"Drugs-75K",
       {"drugs75k/manifest.json", "Drugs-75K/manifest.json", "drugs_75k/manifest.json"},
       75099,
       558002},
      {"Kraken", {"kraken/manifest.json", "Kraken/manifest.json"}, 1552, 21287},
  };

  const char* root = std::getenv("MARCEL_DATA_DIR");
  int verified = 0;
  for (const Expected& want : expected) {
    std::filesystem::path manifest;
    if (root && *root) {
      for (const std::string& name : want.manifest_names) {
        const std::filesystem::path candidate = std::filesystem::path(root) / name;
        if (std::filesystem::exists(candidate)) {
          manifest = candidate;
          break;
        }
      }
    }
    if (manifest.empty()) continue;
    const LoadedDataset data = load_dataset(manifest);
    EXPECT_EQ(data.samples.size(), want.molecules) << want.label;
    std::size_t conformers = 0;
    for (const Sample& s : data.samples) conformers += s.ensembles[0].second.conformers.size();
    EXPECT_EQ(conformers, want.conformers) << want.label;
    ++verified;
  }
  if (verified == 0) {
    crit.skip_note = "public conformer datasets not present under MARCEL_DATA_DIR";
    GTEST_SKIP() << "set MARCEL_DATA_DIR to a directory holding the released datasets "
                    "(drugs75k/manifest.json, kraken/manifest.json) to enable this check";
  }
}

}  // namespace
