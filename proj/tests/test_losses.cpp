#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "apm/losses.hpp"
#include "oracles.hpp"

using namespace apm;

namespace {

constexpr double kPi = std::numbers::pi;

struct Instance {
  Vec cosines;
  std::size_t label;
};

Instance random_instance(std::mt19937_64& rng, double lo = -0.95, double hi = 0.95) {
  std::uniform_int_distribution<std::size_t> classes(2, 8);
  std::uniform_real_distribution<double> cosine(lo, hi);
  Instance in;
  in.cosines.resize(classes(rng));
  for (double& c : in.cosines) c = cosine(rng);
  in.label = std::uniform_int_distribution<std::size_t>(0, in.cosines.size() - 1)(rng);
  return in;
}

PhonemePosteriors random_posteriors(std::mt19937_64& rng, std::size_t frames, std::size_t classes,
                                    double sharpness = 2.0) {
  std::normal_distribution<double> g(0.0, sharpness);
  Mat m(frames, classes);
  for (std::size_t t = 0; t < frames; ++t) {
    Vec z(classes);
    for (double& v : z) v = g(rng);
    const Vec p = stable_softmax(z);
    std::copy(p.begin(), p.end(), m.row(t).begin());
  }
  return PhonemePosteriors(std::move(m));
}

PhonemePosteriors uniform_posteriors(std::size_t frames, std::size_t classes) {
  return PhonemePosteriors(Mat(frames, classes, 1.0 / double(classes)));
}

PhonemePosteriors one_hot_posteriors(std::size_t frames, std::size_t classes) {
  Mat m(frames, classes);
  for (std::size_t t = 0; t < frames; ++t) m(t, t % classes) = 1.0;
  return PhonemePosteriors(std::move(m));
}

}  // namespace

TEST_CASE("softmax_ce") {
  CHECK(softmax_ce(Vec{0.0, 0.0}, 0).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softmax_ce(Vec{800.0, 0.0, -5.0}, 0).loss < 1e-300);
  CHECK_THROWS_AS(softmax_ce(Vec{0.0, 0.0}, 2), Error);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Vec z(5);
  for (double& v : z) v = g(rng);
  const auto r = softmax_ce(z, 3);
  const Vec fd = finite_diff_grad([](const Vec& x) { return softmax_ce(x, 3).loss; }, z);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(fd[i] - r.grad_cos[i]) < 1e-6);
  CHECK(r.phoneme_confidence == -1.0);
}

TEST_CASE("a_softmax_phi") {
  for (double th : {0.0, 0.3, 1.0, 2.0, kPi}) CHECK(a_softmax_phi(th, 1) == std::cos(th));

  // m = 2 at theta = pi/2: piece k=0 gives cos(pi) = -1, piece k=1 gives
  // -cos(pi) - 2 = -1.
  const double k0 = std::cos(2.0 * kPi / 2.0);
  const double k1 = -std::cos(2.0 * kPi / 2.0) - 2.0;
  CHECK(k0 == doctest::Approx(-1.0));
  CHECK(k1 == doctest::Approx(-1.0));
  CHECK(a_softmax_phi(kPi / 2.0, 2) == doctest::Approx(-1.0).epsilon(1e-15));

  // Sweep: monotone nonincreasing, continuous at piece boundaries.
  const int m = 4;
  double prev = a_softmax_phi(0.0, m);
  for (int i = 1; i <= 1000; ++i) {
    const double th = kPi * i / 1000.0;
    const double v = a_softmax_phi(th, m);
    CHECK(v <= prev + 1e-12);
    prev = v;
  }
  for (int k = 1; k < m; ++k) {
    const double b = k * kPi / m;
    CHECK(std::abs(a_softmax_phi(std::nextafter(b, 0.0), m) - a_softmax_phi(b, m)) < 1e-9);
  }
  CHECK(a_softmax_phi(kPi, m) == doctest::Approx(-2.0 * m + 1.0));

  CHECK_THROWS_AS(a_softmax_phi(-0.1, 2), Error);
  CHECK_THROWS_AS(a_softmax_phi(kPi + 0.1, 2), Error);
  try {
    a_softmax_phi(4.0, 2);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ThetaOutOfRange);
  }
}

TEST_CASE("a_softmax_loss") {
  const Vec cos{0.3, -0.2, 0.7};
  const double norm = 2.5;
  SUBCASE("margin 1 is softmax on scaled cosines") {
    const auto r = a_softmax_loss(norm, cos, MarginSpec::a_softmax(1), 1);
    Vec z = cos;
    for (double& v : z) v *= norm;
    const auto ref = softmax_ce(z, 1);
    CHECK(std::abs(r.loss - ref.loss) < 1e-12);
  }
  SUBCASE("margin 2, two classes, direct evaluation") {
    // cos_y = 0.6 -> theta = acos(0.6) < pi/2 so k = 0, phi = cos(2 theta) = 2(0.36) - 1 = -0.28.
    const Vec c2{0.6, 0.1};
    const double phi = 2.0 * 0.6 * 0.6 - 1.0;
    const double expected =
        -std::log(std::exp(norm * phi) / (std::exp(norm * phi) + std::exp(norm * 0.1)));
    CHECK(a_softmax_loss(norm, c2, MarginSpec::a_softmax(2), 0).loss ==
          doctest::Approx(expected).epsilon(1e-12));
    // cos_y = -0.6 -> k = 1, phi = -cos(2 theta) - 2 = -(2(0.36) - 1) - 2 = -1.72.
    const Vec c3{-0.6, 0.1};
    const double phi3 = -(2.0 * 0.36 - 1.0) - 2.0;
    const double expected3 =
        -std::log(std::exp(norm * phi3) / (std::exp(norm * phi3) + std::exp(norm * 0.1)));
    CHECK(a_softmax_loss(norm, c3, MarginSpec::a_softmax(2), 0).loss ==
          doctest::Approx(expected3).epsilon(1e-12));
  }
  SUBCASE("gradient matches finite differences") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> margin(1, 4);
    std::uniform_real_distribution<double> norms(0.5, 5.0);
    int checked = 0;
    while (checked < 100) {
      auto in = random_instance(rng);
      const auto spec = MarginSpec::a_softmax(margin(rng));
      const double x_norm = norms(rng);
      const auto r = a_softmax_loss(x_norm, in.cosines, spec, in.label);
      const Vec fd = finite_diff_grad(
          [&](const Vec& c) { return a_softmax_loss(x_norm, c, spec, in.label).loss; },
          in.cosines);
      CHECK(relative_error(r.grad_cos, fd) < 1e-4);
      const double fd_norm =
          (a_softmax_loss(x_norm + 1e-5, in.cosines, spec, in.label).loss -
           a_softmax_loss(x_norm - 1e-5, in.cosines, spec, in.label).loss) / 2e-5;
      CHECK(std::abs(fd_norm - r.grad_norm) < 1e-4 * std::max(1.0, std::abs(fd_norm)));
      ++checked;
    }
  }
  CHECK_THROWS_AS(a_softmax_loss(1.0, cos, MarginSpec::am(0.1), 0), Error);
  CHECK_THROWS_AS(a_softmax_loss(1.0, cos, MarginSpec::a_softmax(2), 3), Error);
}

TEST_CASE("am_softmax_loss") {
  const Vec cos{0.8, 0.0};
  const auto r = am_softmax_loss(cos, MarginSpec::am(0.2, 1.0), 0);
  CHECK(r.loss == doctest::Approx(-std::log(std::exp(0.6) / (std::exp(0.6) + 1.0))).epsilon(1e-14));
  CHECK(r.margin_used == 0.2);
  CHECK(r.phoneme_confidence == -1.0);

  const auto zero = am_softmax_loss(cos, MarginSpec::am(0.0, 1.0), 0);
  CHECK(std::abs(zero.loss - softmax_ce(cos, 0).loss) < 1e-12);

  const Vec c3{0.5, 0.1, -0.3};
  const double l0 = am_softmax_loss(c3, MarginSpec::am(0.0), 0).loss;
  const double l1 = am_softmax_loss(c3, MarginSpec::am(0.1), 0).loss;
  const double l2 = am_softmax_loss(c3, MarginSpec::am(0.2), 0).loss;
  CHECK(l0 < l1);
  CHECK(l1 < l2);

  CHECK_THROWS_AS(am_softmax_loss(cos, MarginSpec::am(0.2), 2), Error);
  CHECK_THROWS_AS(am_softmax_loss(cos, MarginSpec::aam(0.2), 0), Error);
  MarginSpec bad = MarginSpec::am(0.2);
  bad.s = 0.0;
  CHECK_THROWS_AS(am_softmax_loss(cos, bad, 0), Error);
  bad = MarginSpec::am(-0.1);
  CHECK_THROWS_AS(am_softmax_loss(cos, bad, 0), Error);
}

TEST_CASE("aam_softmax_loss") {
  const Vec cos{std::cos(kPi / 3.0), 0.0};
  const auto r = aam_softmax_loss(cos, MarginSpec::aam(kPi / 6.0, 1.0), 0);
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const Vec c3{0.5, 0.1, -0.3};
  CHECK(std::abs(aam_softmax_loss(c3, MarginSpec::aam(0.0), 1).loss -
                 am_softmax_loss(c3, MarginSpec::am(0.0), 1).loss) < 1e-12);

  // theta + m beyond pi saturates at cos(pi) = -1.
  const Vec wrap{std::cos(3.0), 0.2};
  const auto w = aam_softmax_loss(wrap, MarginSpec::aam(0.5, 2.0), 0);
  CHECK(w.loss == doctest::Approx(oracle::direct_margin_ce(2.0 * -1.0, wrap, 2.0, 0)).epsilon(1e-12));
  CHECK(w.grad_cos[0] == 0.0);
  // A larger margin cannot lower the loss once saturated.
  CHECK(aam_softmax_loss(wrap, MarginSpec::aam(1.5, 2.0), 0).loss == w.loss);
}

TEST_CASE("margin losses: gradients against finite differences") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> margins(0.0, 0.5), scales(1.0, 30.0);
  int checked = 0;
  while (checked < 100) {
    const auto in = random_instance(rng);
    const double m = margins(rng), s = scales(rng);
    const double theta = std::acos(in.cosines[in.label]);
    if (std::abs(theta + m - kPi) < 1e-3) continue;

    const auto am = MarginSpec::am(m, s);
    const auto ra = am_softmax_loss(in.cosines, am, in.label);
    const Vec fa = finite_diff_grad(
        [&](const Vec& c) { return am_softmax_loss(c, am, in.label).loss; }, in.cosines);
    CHECK(relative_error(ra.grad_cos, fa) < 1e-4);

    const auto aam = MarginSpec::aam(m, s);
    const auto rb = aam_softmax_loss(in.cosines, aam, in.label);
    const Vec fb = finite_diff_grad(
        [&](const Vec& c) { return aam_softmax_loss(c, aam, in.label).loss; }, in.cosines);
    CHECK(relative_error(rb.grad_cos, fb) < 1e-4);

    // Derivative with respect to the margin itself.
    const double h = 1e-6;
    const double fd_am = (additive_margin_loss(in.cosines, m + h, s, in.label).loss -
                          additive_margin_loss(in.cosines, m - h, s, in.label).loss) / (2 * h);
    CHECK(std::abs(fd_am - additive_margin_loss(in.cosines, m, s, in.label).grad_margin) <
          1e-4 * std::max(1.0, std::abs(fd_am)));
    if (m > h && std::abs(theta + m - kPi) > 1e-3) {
      const double fd_aam =
          (additive_angular_margin_loss(in.cosines, m + h, s, in.label).loss -
           additive_angular_margin_loss(in.cosines, m - h, s, in.label).loss) / (2 * h);
      CHECK(std::abs(fd_aam -
                     additive_angular_margin_loss(in.cosines, m, s, in.label).grad_margin) <
            1e-4 * std::max(1.0, std::abs(fd_aam)));
    }
    ++checked;
  }
}

TEST_CASE("phoneme_aware_margin") {
  const auto spec = MarginSpec::apm(0.2, 10.0);
  const auto u = phoneme_aware_margin(uniform_posteriors(7, 4), spec);
  CHECK(u.confidence == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(u.margin == doctest::Approx(0.2 + 10.0 / 4.0).epsilon(1e-15));

  const auto h = phoneme_aware_margin(one_hot_posteriors(5, 3), spec);
  CHECK(h.confidence == 1.0);
  CHECK(h.margin == doctest::Approx(10.2).epsilon(1e-15));

  // Two frames, rows [0.5,0.3,0.2] and [0.2,0.2,0.6]: maxima 0.5 and 0.6.
  Mat rows(2, 3, {0.5, 0.3, 0.2, 0.2, 0.2, 0.6});
  const auto w = phoneme_aware_margin(PhonemePosteriors(rows), spec);
  CHECK(w.confidence == doctest::Approx(0.55).epsilon(1e-15));
  CHECK(w.margin == doctest::Approx(5.7).epsilon(1e-14));

  try {
    phoneme_aware_margin(PhonemePosteriors(Mat(0, 3)), spec);
    FAIL("expected EmptyPosterior");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyPosterior);
  }
  CHECK_THROWS_AS(PhonemePosteriors(Mat(1, 2, {0.7, 0.7})), Error);
  CHECK_THROWS_AS(PhonemePosteriors(Mat(1, 2, {1.5, -0.5})), Error);
}

TEST_CASE("apm_softmax_loss and apam_softmax_loss") {
  std::mt19937_64 rng(5);
  const Vec cos{0.6, 0.2, -0.1, 0.3};
  const auto post = random_posteriors(rng, 10, 6);

  SUBCASE("beta = 0 reduces to the fixed-margin losses") {
    CHECK(std::abs(apm_softmax_loss(cos, post, MarginSpec::apm(0.2, 0.0), 0).loss -
                   am_softmax_loss(cos, MarginSpec::am(0.2), 0).loss) < 1e-12);
    CHECK(std::abs(apam_softmax_loss(cos, post, MarginSpec::apam(0.2, 0.0), 0).loss -
                   aam_softmax_loss(cos, MarginSpec::aam(0.2), 0).loss) < 1e-12);
  }
  SUBCASE("one-hot posteriors give margin m + beta") {
    const auto hot = one_hot_posteriors(8, 5);
    const auto r = apm_softmax_loss(cos, hot, MarginSpec::apm(0.2, 10.0), 0);
    CHECK(r.loss == doctest::Approx(am_softmax_loss(cos, MarginSpec::am(10.2), 0).loss).epsilon(1e-12));
    CHECK(r.margin_used == doctest::Approx(10.2));
    CHECK(r.phoneme_confidence == 1.0);
  }
  SUBCASE("large phoneme margin saturates the angular form") {
    const auto hot = one_hot_posteriors(8, 5);
    const auto r = apam_softmax_loss(cos, hot, MarginSpec::apam(0.2, 10.0, 4.0), 0);
    CHECK(r.loss ==
          doctest::Approx(oracle::direct_margin_ce(4.0 * -1.0, cos, 4.0, 0)).epsilon(1e-12));
  }
  SUBCASE("diagnostics") {
    const auto spec = MarginSpec::apm(0.2, 10.0);
    const auto pm = phoneme_aware_margin(post, spec);
    const auto r = apm_softmax_loss(cos, post, spec, 2);
    CHECK(r.margin_used == pm.margin);
    CHECK(r.phoneme_confidence == pm.confidence);
  }
  SUBCASE("gradients with posteriors held fixed") {
    std::uniform_real_distribution<double> margins(0.0, 0.4), betas(0.0, 1.0), scales(1.0, 30.0);
    int checked = 0;
    while (checked < 100) {
      const auto in = random_instance(rng);
      const auto p = random_posteriors(rng, 12, 9);
      const double m = margins(rng), beta = betas(rng), s = scales(rng);
      const auto pm = phoneme_aware_margin(p, MarginSpec::apm(m, beta, s));
      const double theta = std::acos(in.cosines[in.label]);
      if (std::abs(theta + pm.margin - kPi) < 1e-3) continue;

      const auto apm = MarginSpec::apm(m, beta, s);
      const auto ra = apm_softmax_loss(in.cosines, p, apm, in.label);
      const Vec fa = finite_diff_grad(
          [&](const Vec& c) { return apm_softmax_loss(c, p, apm, in.label).loss; }, in.cosines);
      CHECK(relative_error(ra.grad_cos, fa) < 1e-4);

      const auto apam = MarginSpec::apam(m, beta, s);
      const auto rb = apam_softmax_loss(in.cosines, p, apam, in.label);
      const Vec fb = finite_diff_grad(
          [&](const Vec& c) { return apam_softmax_loss(c, p, apam, in.label).loss; }, in.cosines);
      CHECK(relative_error(rb.grad_cos, fb) < 1e-4);
      ++checked;
    }
  }
}

TEST_CASE("properties: reduction chain") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> margins(0.0, 0.5), scales(1.0, 40.0), norms(0.1, 8.0);
  for (int trial = 0; trial < 300; ++trial) {
    const auto in = random_instance(rng, -1.0, 1.0);
    const auto post = random_posteriors(rng, 6, 5);
    const double m = margins(rng), s = scales(rng);
    const auto y = in.label;
    const auto& c = in.cosines;

    CHECK(std::abs(apm_softmax_loss(c, post, MarginSpec::apm(m, 0.0, s), y).loss -
                   am_softmax_loss(c, MarginSpec::am(m, s), y).loss) <= 1e-12);
    CHECK(std::abs(apam_softmax_loss(c, post, MarginSpec::apam(m, 0.0, s), y).loss -
                   aam_softmax_loss(c, MarginSpec::aam(m, s), y).loss) <= 1e-12);
    CHECK(std::abs(am_softmax_loss(c, MarginSpec::am(0.0, 1.0), y).loss - softmax_ce(c, y).loss) <=
          1e-12);
    CHECK(std::abs(aam_softmax_loss(c, MarginSpec::aam(0.0, s), y).loss -
                   am_softmax_loss(c, MarginSpec::am(0.0, s), y).loss) <= 1e-12);
    const double n = norms(rng);
    Vec scaled = c;
    for (double& v : scaled) v *= n;
    CHECK(std::abs(a_softmax_loss(n, c, MarginSpec::a_softmax(1), y).loss -
                   softmax_ce(scaled, y).loss) <= 1e-12);
  }
}

TEST_CASE("properties: loss nondecreasing in margin and in phoneme confidence") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> scales(1.0, 30.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto in = random_instance(rng);
    // Make the target cosine maximal.
    const auto top = std::max_element(in.cosines.begin(), in.cosines.end());
    std::iter_swap(top, in.cosines.begin() + static_cast<std::ptrdiff_t>(in.label));
    const double s = scales(rng);
    double prev_am = -1.0, prev_aam = -1.0;
    for (double m = 0.0; m <= 1.0; m += 0.05) {
      const double am = am_softmax_loss(in.cosines, MarginSpec::am(m, s), in.label).loss;
      const double aam = aam_softmax_loss(in.cosines, MarginSpec::aam(m, s), in.label).loss;
      CHECK(am >= prev_am);
      CHECK(aam >= prev_aam);
      prev_am = am;
      prev_aam = aam;
    }
    // p_i enters only through P_i = m + beta p_i.
    double prev_apm = -1.0, prev_apam = -1.0;
    for (double p = 0.1; p <= 1.0; p += 0.1) {
      const PhonemeMargin pm{0.2 + 0.5 * p, p};
      const double a = margin_loss(in.cosines, MarginSpec::apm(0.2, 0.5, s), in.label, &pm).loss;
      const double b = margin_loss(in.cosines, MarginSpec::apam(0.2, 0.5, s), in.label, &pm).loss;
      CHECK(a >= prev_apm);
      CHECK(b >= prev_apam);
      prev_apm = a;
      prev_apam = b;
    }
  }
}

TEST_CASE("properties: p_i bounds and frame-order invariance") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> frames(1, 40), classes(2, 30);
  std::uniform_real_distribution<double> sharp(0.1, 6.0);
  const auto spec = MarginSpec::apm(0.2, 10.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t t = frames(rng), c = classes(rng);
    const auto post = random_posteriors(rng, t, c, sharp(rng));
    const auto pm = phoneme_aware_margin(post, spec);
    CHECK(pm.confidence >= 1.0 / double(c) - 1e-15);
    CHECK(pm.confidence <= 1.0);
    CHECK(pm.margin >= spec.m + spec.beta / double(c) - 1e-12);
    CHECK(pm.margin <= spec.m + spec.beta + 1e-12);

    std::vector<std::size_t> order(t);
    for (std::size_t i = 0; i < t; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    Mat permuted(t, c);
    for (std::size_t i = 0; i < t; ++i) {
      const auto src = post.probs().row(order[i]);
      std::copy(src.begin(), src.end(), permuted.row(i).begin());
    }
    const auto pp = phoneme_aware_margin(PhonemePosteriors(std::move(permuted)), spec);
    CHECK(pp.confidence == pm.confidence);
    CHECK(pp.margin == pm.margin);
  }
}

TEST_CASE("loss variant names") {
  CHECK(parse_loss_variant("apm") == LossVariant::APMS);
  CHECK(parse_loss_variant("APAMS") == LossVariant::APAMS);
  CHECK(parse_loss_variant("softmax") == LossVariant::S);
  CHECK(!parse_loss_variant("arcface").has_value());
  for (auto v : {LossVariant::S, LossVariant::AS, LossVariant::AMS, LossVariant::AAMS,
                 LossVariant::APMS, LossVariant::APAMS}) {
    CHECK(parse_loss_variant(to_string(v)) == v);
  }
}
