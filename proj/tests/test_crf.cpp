#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "crfseg/crf.hpp"
#include "support/gradcheck.hpp"
#include "support/mean_field_oracle.hpp"

using namespace crfseg;

namespace {

CrfPotentials make_potentials(int p, int h, int w, std::mt19937& rng, float psi_scale = 1.0f,
                              float k_lo = 0.2f, float k_hi = 2.0f) {
  std::uniform_real_distribution<float> du(-psi_scale, psi_scale);
  std::uniform_real_distribution<float> dk(k_lo, k_hi);
  Tensor psi = Tensor::zeros({p, h, w});
  for (float& v : psi.values()) v = du(rng);
  Tensor k = Tensor::zeros({4, h, w});
  for (float& v : k.values()) v = dk(rng);
  return {psi, k};
}

testsupport::MeanFieldInstance to_oracle(const CrfPotentials& pots,
                                         const CompatibilityMatrix& mu) {
  testsupport::MeanFieldInstance in;
  in.p = pots.psi_u.dim(0);
  in.h = pots.psi_u.dim(1);
  in.w = pots.psi_u.dim(2);
  in.psi.assign(pots.psi_u.values().begin(), pots.psi_u.values().end());
  in.k.assign(pots.k.values().begin(), pots.k.values().end());
  in.mu.assign(mu.mu.values().begin(), mu.mu.values().end());
  return in;
}

}  // namespace

TEST_CASE("gibbs_energy hand cases") {
  SUBCASE("all zero") {
    CrfPotentials pots{Tensor::zeros({2, 2, 2}), Tensor::zeros({4, 2, 2})};
    CompatibilityMatrix mu{Tensor::zeros({2, 2})};
    LabelMap lm(2, 2, 1);
    CHECK(gibbs_energy(lm, pots, mu) == 0.0);
  }
  SUBCASE("1x2 grid, both labelings cost 1") {
    CrfPotentials pots{Tensor::from_vector({2, 1, 2}, {0, 1, 1, 0}),
                       Tensor::full({4, 1, 2}, 1.0f)};
    CompatibilityMatrix mu = CompatibilityMatrix::potts(2);
    LabelMap same(1, 2, 0);
    CHECK(gibbs_energy(same, pots, mu) == doctest::Approx(1.0).epsilon(1e-9));
    LabelMap diff(1, 2, 0);
    diff(0, 1) = 1;
    CHECK(gibbs_energy(diff, pots, mu) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("label out of range rejected") {
    CrfPotentials pots{Tensor::zeros({2, 1, 2}), Tensor::full({4, 1, 2}, 1.0f)};
    CompatibilityMatrix mu = CompatibilityMatrix::potts(2);
    LabelMap bad(1, 2, 3);
    CHECK_THROWS_AS(gibbs_energy(bad, pots, mu), ValueError);
  }
}

TEST_CASE("exact_marginals closed forms") {
  SUBCASE("single pixel, flat unary") {
    CrfPotentials pots{Tensor::zeros({2, 1, 1}), Tensor::full({4, 1, 1}, 1.0f)};
    CompatibilityMatrix mu = CompatibilityMatrix::potts(2);
    auto m = exact_marginals_f64(pots, mu);
    CHECK(m[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(m[1] == doctest::Approx(0.5).epsilon(1e-9));
  }
  SUBCASE("single pixel, psi = (0, ln 3)") {
    const float ln3 = std::log(3.0f);
    CrfPotentials pots{Tensor::from_vector({2, 1, 1}, {0.0f, ln3}),
                       Tensor::full({4, 1, 1}, 1.0f)};
    CompatibilityMatrix mu = CompatibilityMatrix::potts(2);
    auto m = exact_marginals_f64(pots, mu);
    // closed form for the potential as stored (f32 quantizes ln 3)
    const double p1 = std::exp(-static_cast<double>(ln3));
    CHECK(m[0] == doctest::Approx(1.0 / (1.0 + p1)).epsilon(1e-12));
    CHECK(m[1] == doctest::Approx(p1 / (1.0 + p1)).epsilon(1e-12));
    CHECK(m[0] == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(m[1] == doctest::Approx(0.25).epsilon(1e-6));
  }
  SUBCASE("2x2 random: per-pixel sums are 1") {
    std::mt19937 rng(3);
    CrfPotentials pots = make_potentials(2, 2, 2, rng);
    CompatibilityMatrix mu = CompatibilityMatrix::potts(2);
    auto m = exact_marginals_f64(pots, mu);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(m[i] + m[4 + i] - 1.0) < 1e-9);
  }
  SUBCASE("oversized instance rejected") {
    CrfPotentials pots{Tensor::zeros({3, 5, 4}), Tensor::full({4, 5, 4}, 1.0f)};
    CompatibilityMatrix mu = CompatibilityMatrix::potts(3);
    CHECK_THROWS_AS(exact_marginals(pots, mu), ValueError);
  }
}

TEST_CASE("exact_marginals matches an independent enumeration on 2x2 instances") {
  // The reference enumerates all 16 labelings with its own energy formula.
  std::mt19937 rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    CrfPotentials pots = make_potentials(2, 2, 2, rng, 1.5f);
    CompatibilityMatrix mu = CompatibilityMatrix::potts(2);
    const float* psi = pots.psi_u.data();
    const float* k = pots.k.data();
    // pixel order: (0,0) (0,1) (1,0) (1,1); energy from first principles:
    // edges {0,1},{2,3} horizontal (k[Left] at left pixel),
    // {0,2},{1,3} vertical (k[Up] at top pixel)
    double acc[2][4] = {{0, 0, 0, 0}, {0, 0, 0, 0}};
    double z = 0.0;
    for (int x0 = 0; x0 < 2; ++x0)
      for (int x1 = 0; x1 < 2; ++x1)
        for (int x2 = 0; x2 < 2; ++x2)
          for (int x3 = 0; x3 < 2; ++x3) {
            const int lab[4] = {x0, x1, x2, x3};
            double e = 0.0;
            for (int i = 0; i < 4; ++i) e += psi[lab[i] * 4 + i];
            auto pott = [](int a, int b) { return a == b ? 0.0 : 1.0; };
            e += pott(x0, x1) * k[3 * 4 + 0];  // left-channel at pixel 0
            e += pott(x2, x3) * k[3 * 4 + 2];
            e += pott(x0, x2) * k[0 * 4 + 0];  // up-channel at pixel 0
            e += pott(x1, x3) * k[0 * 4 + 1];
            const double wgt = std::exp(-e);
            z += wgt;
            for (int i = 0; i < 4; ++i) acc[lab[i]][i] += wgt;
          }
    auto m = exact_marginals_f64(pots, mu);
    for (int l = 0; l < 2; ++l)
      for (int i = 0; i < 4; ++i)
        CHECK(std::abs(m[l * 4 + i] - acc[l][i] / z) < 1e-9);
  }
}

TEST_CASE("message_passing neighbor counts") {
  SUBCASE("zero kernels silence all messages") {
    Tensor q = Tensor::full({3, 2, 2}, 1.0f);
    Tensor k = Tensor::zeros({4, 2, 2});
    Tensor m = message_passing(q, k);
    for (float v : m.values()) CHECK(v == 0.0f);
  }
  SUBCASE("2x2 grid has exactly two in-grid neighbors per pixel") {
    Tensor q = Tensor::full({1, 2, 2}, 1.0f);
    Tensor k = Tensor::full({4, 2, 2}, 1.0f);
    Tensor m = message_passing(q, k);
    for (float v : m.values()) CHECK(v == doctest::Approx(2.0f));
  }
  SUBCASE("3x3 grid: center 4, edges 3, corners 2") {
    Tensor q = Tensor::full({1, 3, 3}, 1.0f);
    Tensor k = Tensor::full({4, 3, 3}, 1.0f);
    Tensor m = message_passing(q, k);
    const float expect[9] = {2, 3, 2, 3, 4, 3, 2, 3, 2};
    for (int i = 0; i < 9; ++i) CHECK(m.values()[i] == doctest::Approx(expect[i]));
  }
  SUBCASE("output depends only on the four taxicab-1 neighbors") {
    std::mt19937 rng(7);
    CrfPotentials pots = make_potentials(2, 5, 5, rng);
    Tensor q = Tensor::zeros({2, 5, 5});
    for (float& v : q.values()) v = std::uniform_real_distribution<float>(0, 1)(rng);
    Tensor base = message_passing(q, pots.k);
    // perturb (0,0); the value at (3,3) must not move
    Tensor q2 = q.clone();
    q2.data()[0] += 10.0f;
    Tensor moved = message_passing(q2, pots.k);
    CHECK(moved.at({0, 3, 3}) == base.at({0, 3, 3}));
    CHECK(moved.at({1, 3, 3}) == base.at({1, 3, 3}));
    // perturbing (3,2), a taxicab-1 neighbor, must move it
    Tensor q3 = q.clone();
    q3.data()[3 * 5 + 2] += 1.0f;
    Tensor moved3 = message_passing(q3, pots.k);
    CHECK(moved3.at({0, 3, 3}) != base.at({0, 3, 3}));
  }
}

TEST_CASE("compatibility_transform") {
  std::mt19937 rng(5);
  Tensor m = Tensor::zeros({2, 3, 3});
  for (float& v : m.values()) v = std::uniform_real_distribution<float>(-1, 1)(rng);

  SUBCASE("identity matrix is the identity") {
    Tensor mu_t = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
    Tensor out = compatibility_transform(m, CompatibilityMatrix{mu_t});
    for (std::size_t i = 0; i < m.size(); ++i)
      CHECK(out.values()[i] == doctest::Approx(m.values()[i]));
  }
  SUBCASE("zero matrix zeroes") {
    Tensor out = compatibility_transform(m, CompatibilityMatrix{Tensor::zeros({2, 2})});
    for (float v : out.values()) CHECK(v == 0.0f);
  }
  SUBCASE("swap matrix swaps channels") {
    Tensor mu_t = Tensor::from_vector({2, 2}, {0, 1, 1, 0});
    Tensor out = compatibility_transform(m, CompatibilityMatrix{mu_t});
    for (int i = 0; i < 9; ++i) {
      CHECK(out.values()[i] == doctest::Approx(m.values()[9 + i]));
      CHECK(out.values()[9 + i] == doctest::Approx(m.values()[i]));
    }
  }
}

TEST_CASE("local_update_normalize closed forms") {
  SUBCASE("all zero: uniform") {
    Tensor q = local_update_normalize(Tensor::zeros({3, 2, 2}), Tensor::zeros({3, 2, 2}));
    for (float v : q.values()) CHECK(v == doctest::Approx(1.0f / 3.0f).epsilon(1e-6));
  }
  SUBCASE("C = 0 reduces to softmax(-psi)") {
    std::mt19937 rng(9);
    Tensor psi = Tensor::zeros({4, 3, 2});
    for (float& v : psi.values()) v = std::uniform_real_distribution<float>(-2, 2)(rng);
    Tensor q = local_update_normalize(Tensor::zeros({4, 3, 2}), psi);
    Tensor ref = softmax_channels(neg(reshape(psi, {1, 4, 3, 2})));
    for (std::size_t i = 0; i < q.size(); ++i)
      CHECK(q.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-6));
  }
  SUBCASE("psi = 0, C = (0, ln 2) gives (2/3, 1/3)") {
    Tensor c = Tensor::from_vector({2, 1, 1}, {0.0f, std::log(2.0f)});
    Tensor q = local_update_normalize(c, Tensor::zeros({2, 1, 1}));
    CHECK(q.values()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(q.values()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }
}

TEST_CASE("mean_field_infer: zero kernels reduce to the unary softmax at every iteration") {
  std::mt19937 rng(13);
  CrfPotentials pots = make_potentials(3, 4, 4, rng, 2.0f);
  pots.k = Tensor::zeros({4, 4, 4});
  CompatibilityMatrix mu = CompatibilityMatrix::potts(3);
  MeanFieldState st = mean_field_infer(pots, mu, 5);
  Tensor ref = softmax_channels(neg(reshape(pots.psi_u, {1, 3, 4, 4})));
  REQUIRE(st.iterates.size() == 6);
  for (const Tensor& q : st.iterates)
    for (std::size_t i = 0; i < q.size(); ++i)
      CHECK(std::abs(q.values()[i] - ref.values()[i]) < 1e-6);
}

TEST_CASE("mean_field_infer matches the scalar-loop reference") {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    CAPTURE(trial);
    CrfPotentials pots = make_potentials(3, 4, 4, rng, 1.5f);
    CompatibilityMatrix mu{Tensor::zeros({3, 3})};
    for (float& v : mu.mu.values()) v = std::uniform_real_distribution<float>(-1, 1)(rng);

    MeanFieldState st = mean_field_infer(pots, mu, 5);
    auto ref = testsupport::mean_field_reference(to_oracle(pots, mu), 5);
    REQUIRE(st.iterates.size() == ref.size());
    for (std::size_t it = 0; it < ref.size(); ++it)
      for (std::size_t i = 0; i < st.iterates[it].size(); ++i)
        CHECK(std::abs(st.iterates[it].values()[i] - ref[it][i]) < 1e-6);
  }
}

TEST_CASE("raw-psi initialization is honored and still normalizes afterwards") {
  std::mt19937 rng(19);
  CrfPotentials pots = make_potentials(2, 3, 3, rng);
  CompatibilityMatrix mu = CompatibilityMatrix::potts(2);
  MeanFieldState st = mean_field_infer(pots, mu, 2, QInit::RawPsi);
  for (std::size_t i = 0; i < pots.psi_u.size(); ++i)
    CHECK(st.iterates[0].values()[i] == pots.psi_u.values()[i]);
  auto ref = testsupport::mean_field_reference(to_oracle(pots, mu), 2, true);
  for (std::size_t i = 0; i < st.q.size(); ++i)
    CHECK(std::abs(st.q.values()[i] - ref.back()[i]) < 1e-6);
}

TEST_CASE("Q stays a proper distribution after every iteration") {
  std::mt19937 rng(23);
  CrfPotentials pots = make_potentials(4, 5, 6, rng, 3.0f, 0.5f, 3.0f);
  CompatibilityMatrix mu{Tensor::zeros({4, 4})};
  for (float& v : mu.mu.values()) v = std::uniform_real_distribution<float>(-2, 2)(rng);
  MeanFieldState st = mean_field_infer(pots, mu, 5);
  for (const Tensor& q : st.iterates) {
    const std::size_t hw = 30;
    for (std::size_t i = 0; i < hw; ++i) {
      double s = 0.0;
      for (int l = 0; l < 4; ++l) {
        const float v = q.values()[l * hw + i];
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("attractive instance: mean-field argmax agrees with exact marginals") {
  // three pixels prefer label 0, one weakly prefers label 1; strong
  // attractive coupling
  Tensor psi = Tensor::zeros({2, 2, 2});
  // channel 0 costs
  psi.data()[0] = 0.0f;
  psi.data()[1] = 0.0f;
  psi.data()[2] = 0.0f;
  psi.data()[3] = 0.5f;
  // channel 1 costs
  psi.data()[4] = 2.0f;
  psi.data()[5] = 2.0f;
  psi.data()[6] = 2.0f;
  psi.data()[7] = 0.0f;
  CrfPotentials pots{psi, Tensor::full({4, 2, 2}, 2.0f)};
  CompatibilityMatrix mu = CompatibilityMatrix::potts(2);

  Tensor exact = exact_marginals(pots, mu);
  MeanFieldState mf = mean_field_infer(pots, mu, 5);
  for (int i = 0; i < 4; ++i) {
    const int am_exact = exact.values()[i] >= exact.values()[4 + i] ? 0 : 1;
    const int am_mf = mf.q.values()[i] >= mf.q.values()[4 + i] ? 0 : 1;
    CHECK(am_exact == am_mf);
  }
}

TEST_CASE("gradients flow through five unrolled iterations") {
  std::mt19937 rng(29);
  Tensor psi = Tensor::randn({2, 3, 3}, rng, 1.0f, true);
  Tensor k = Tensor::zeros({4, 3, 3}, true);
  for (float& v : k.values()) v = std::uniform_real_distribution<float>(0.3f, 1.5f)(rng);
  k.set_requires_grad(true);
  Tensor mu_t = Tensor::randn({2, 2}, rng, 0.8f, true);
  Tensor readout = Tensor::randn({2, 3, 3}, rng, 1.0f);

  std::vector<Tensor> leaves{psi, k, mu_t};
  testsupport::GradCheckOptions opt;
  opt.coords_per_leaf = 10;
  auto rep = testsupport::check_gradients(
      leaves,
      [&]() {
        CrfPotentials pots{psi, k};
        CompatibilityMatrix mu{mu_t};
        MeanFieldState st = mean_field_infer(pots, mu, 5);
        return sum(mul(st.q, readout));
      },
      rng, opt);
  CHECK_MESSAGE(rep.ok, rep.worst);
}
