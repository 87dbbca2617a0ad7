#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "apm/model.hpp"
#include "model_oracle.hpp"

using namespace apm;

namespace {

const LossVariant kAll[] = {LossVariant::S,    LossVariant::AS,   LossVariant::AMS,
                            LossVariant::AAMS, LossVariant::APMS, LossVariant::APAMS};

MarginSpec spec_for(LossVariant v) {
  switch (v) {
    case LossVariant::S: return MarginSpec::softmax();
    case LossVariant::AS: return MarginSpec::a_softmax(2);
    case LossVariant::AMS: return MarginSpec::am(0.2, 5.0);
    case LossVariant::AAMS: return MarginSpec::aam(0.2, 5.0);
    case LossVariant::APMS: return MarginSpec::apm(0.2, 1.0, 5.0);
    case LossVariant::APAMS: return MarginSpec::apam(0.2, 1.0, 5.0);
  }
  return {};
}

// Worst relative error over all tensors between backward() and central
// differences of multi_task_loss().
double backward_error(const ModelParams& params, const Segment& seg, const MarginSpec& spec,
                      const MultiTaskWeights& w, const ForwardOptions& opt) {
  const auto g = backward(params, seg, spec, w, opt);
  const auto grads = g.grads.tensors();
  double worst = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    ModelParams probe = params;
    const auto base = params.tensors()[k];
    const Vec x(base.begin(), base.end());
    const Vec fd = finite_diff_grad(
        [&](const Vec& v) {
          auto dst = probe.tensors()[k];
          std::copy(v.begin(), v.end(), dst.begin());
          return multi_task_loss(probe, seg, spec, w, opt).total.loss;
        },
        x);
    worst = std::max(worst, relative_error(grads[k], fd));
  }
  return worst;
}

bool smooth_point(const oracle::ForwardTrace& f) {
  return f.kink_distance > 1e-3 && f.min_variance > 1e-4;
}

}  // namespace

TEST_CASE("encode_frames shapes and smoke cases") {
  SUBCASE("default config keeps the frame count") {
    ModelConfig c;
    const auto p = init_params(c, 1);
    std::mt19937_64 rng(2);
    const auto seg = oracle::random_segment(rng, c, 100);
    const Mat h = encode_frames(p, seg.frames);
    CHECK(h.rows() == 100);
    CHECK(h.cols() == c.encoder.hidden_dim());
  }
  SUBCASE("identity weights pass nonnegative input through") {
    ModelConfig c;
    c.encoder.input_dim = 4;
    c.encoder.layer_dims = {4, 4};
    c.encoder.dilations = {1, 1};
    auto p = init_params(c, 1);
    for (auto& layer : p.encoder) {
      layer.weight = Mat(4, 12);
      for (std::size_t i = 0; i < 4; ++i) layer.weight(i, 4 + i) = 1.0;
      std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    Mat x(9, 4);
    for (double& v : x.data()) v = u(rng);
    CHECK(encode_frames(p, x) == x);
  }
  SUBCASE("constant input gives constant rows") {
    ModelConfig c;
    const auto p = init_params(c, 4);
    Mat x(20, c.encoder.input_dim);
    for (std::size_t t = 0; t < 20; ++t) {
      for (std::size_t i = 0; i < x.cols(); ++i) x(t, i) = 0.1 * double(i) - 1.0;
    }
    const Mat h = encode_frames(p, x);
    for (std::size_t t = 1; t < h.rows(); ++t) {
      for (std::size_t i = 0; i < h.cols(); ++i) CHECK(h(t, i) == h(0, i));
    }
  }
  SUBCASE("too short") {
    ModelConfig c;
    const auto p = init_params(c, 1);
    Mat x(c.encoder.receptive_field() - 1, c.encoder.input_dim);
    try {
      encode_frames(p, x);
      FAIL("expected SegmentTooShort");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SegmentTooShort);
    }
  }
  SUBCASE("config validation") {
    EncoderConfig e;
    e.layer_dims = {8};
    e.dilations = {1};
    CHECK_THROWS_AS(e.validate(), Error);
    e.layer_dims = {8, 8};
    e.dilations = {1, 0};
    CHECK_THROWS_AS(e.validate(), Error);
    CHECK(EncoderConfig{}.receptive_field() == 13);
  }
}

TEST_CASE("phoneme_posteriors") {
  const auto c = oracle::tiny_config();
  auto p = init_params(c, 7);
  std::mt19937_64 rng(8);
  const auto seg = oracle::random_segment(rng, c, 10);
  const Mat h = encode_frames(p, seg.frames);

  const auto post = phoneme_posteriors(p, h);
  CHECK(post.frames() == 10);
  CHECK(post.classes() == c.num_phonemes);
  for (std::size_t t = 0; t < 10; ++t) {
    double sum = 0.0;
    for (double v : post.probs().row(t)) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  const auto pm = phoneme_aware_margin(post, MarginSpec::apm(0.2, 10.0));
  CHECK(pm.confidence >= 1.0 / double(c.num_phonemes));
  CHECK(pm.confidence <= 1.0);

  p.phoneme_head.weight = Mat(c.num_phonemes, c.encoder.hidden_dim());
  std::fill(p.phoneme_head.bias.begin(), p.phoneme_head.bias.end(), 0.0);
  const auto uniform = phoneme_posteriors(p, h);
  for (double v : uniform.probs().data()) CHECK(v == doctest::Approx(1.0 / 5.0).epsilon(1e-15));
}

TEST_CASE("stats_pool") {
  const Vec two = stats_pool(Mat(2, 1, {0.0, 2.0}));
  CHECK(two[0] == 1.0);
  CHECK(two[1] == doctest::Approx(1.0).epsilon(1e-9));

  const Vec flat = stats_pool(Mat(5, 2, 3.0));
  CHECK(flat[0] == 3.0);
  CHECK(flat[2] < 1e-4);
  CHECK(flat[3] < 1e-4);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  Mat h(12, 3);
  for (double& v : h.data()) v = g(rng);
  Mat rev(12, 3);
  for (std::size_t t = 0; t < 12; ++t) {
    const auto r = h.row(11 - t);
    std::copy(r.begin(), r.end(), rev.row(t).begin());
  }
  const Vec a = stats_pool(h), b = stats_pool(rev);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));

  CHECK_THROWS_AS(stats_pool(Mat(1, 3)), Error);
}

TEST_CASE("language_forward") {
  const auto c = oracle::tiny_config();
  auto p = init_params(c, 11, LossVariant::AMS);
  for (std::size_t j = 0; j < c.num_languages; ++j) {
    CHECK(l2_norm(p.language.weight.row(j)) == doctest::Approx(1.0).epsilon(1e-14));
  }
  std::mt19937_64 rng(12);
  const auto seg = oracle::random_segment(rng, c, 8);
  const Vec pooled = stats_pool(encode_frames(p, seg.frames));
  const auto out = language_forward(p, pooled, LossVariant::AMS);
  CHECK(out.embedding.size() == c.encoder.embedding_dim);
  CHECK(out.scores.size() == c.num_languages);
  for (double v : out.scores) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }

  auto doubled = p;
  for (double& v : doubled.embedding.weight.data()) v *= 2.0;
  for (double& v : doubled.embedding.bias) v *= 2.0;
  const auto out2 = language_forward(doubled, pooled, LossVariant::AMS);
  CHECK(out2.embedding_norm == doctest::Approx(2.0 * out.embedding_norm));
  for (std::size_t j = 0; j < out.scores.size(); ++j) {
    CHECK(out2.scores[j] == doctest::Approx(out.scores[j]).epsilon(1e-14));
  }
  CHECK(extract_embedding(p, seg) == out.embedding);
}

TEST_CASE("multi_task_loss agrees with the loop-level oracle") {
  const auto c = oracle::tiny_config();
  std::mt19937_64 rng(13);
  for (LossVariant v : kAll) {
    const auto spec = spec_for(v);
    for (int trial = 0; trial < 10; ++trial) {
      const auto p = init_params(c, 100 + trial, v);
      const auto seg = oracle::random_segment(rng, c, 8);
      for (double alpha : {0.0, 0.5, 1.0}) {
        const auto lib = multi_task_loss(p, seg, spec, {alpha});
        const auto ref = oracle::forward(p, seg, spec);
        CHECK(lib.language_loss == doctest::Approx(ref.language_loss).epsilon(1e-10));
        CHECK(lib.phoneme_loss == doctest::Approx(ref.phoneme_loss).epsilon(1e-10));
        CHECK(lib.total.loss == doctest::Approx(oracle::total_loss(ref, alpha)).epsilon(1e-10));
        CHECK(lib.total.loss >= lib.language_loss);
        if (alpha == 0.0) CHECK(lib.total.loss == lib.language_loss);
        if (is_phoneme_aware(v)) {
          CHECK(lib.total.phoneme_confidence == doctest::Approx(ref.confidence).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("backward matches finite differences on the tiny config") {
  const auto c = oracle::tiny_config();
  std::mt19937_64 rng(14);
  for (LossVariant v : kAll) {
    CAPTURE(to_string(v));
    const auto spec = spec_for(v);
    int checked = 0;
    std::uint64_t seed = 200;
    while (checked < 5) {
      const auto p = init_params(c, seed++, v);
      const auto seg = oracle::random_segment(rng, c, 8);
      ForwardOptions opt;
      if (is_phoneme_aware(v)) opt.confidence_override = oracle::forward(p, seg, spec).confidence;
      const double conf = opt.confidence_override.value_or(0.0);
      if (!smooth_point(oracle::forward(p, seg, spec, opt.confidence_override ? &conf : nullptr))) {
        continue;
      }
      CHECK(backward_error(p, seg, spec, {1.0}, opt) < 1e-4);
      ++checked;
    }
  }
}

TEST_CASE("backward with the margin gradient flowing into the phoneme branch") {
  const auto c = oracle::tiny_config();
  std::mt19937_64 rng(15);
  for (LossVariant v : {LossVariant::APMS, LossVariant::APAMS}) {
    auto spec = spec_for(v);
    spec.phoneme_grad_flow = true;
    int checked = 0;
    std::uint64_t seed = 300;
    while (checked < 5) {
      const auto p = init_params(c, seed++, v);
      const auto seg = oracle::random_segment(rng, c, 8);
      if (!smooth_point(oracle::forward(p, seg, spec))) continue;
      CHECK(backward_error(p, seg, spec, {1.0}, {}) < 1e-4);
      ++checked;
    }
  }
}

TEST_CASE("smoothness distances agree with the loop-level oracle") {
  const auto c = oracle::tiny_config();
  std::mt19937_64 rng(16);
  for (LossVariant v : kAll) {
    CAPTURE(to_string(v));
    auto spec = spec_for(v);
    spec.phoneme_grad_flow = is_phoneme_aware(v);
    for (int trial = 0; trial < 10; ++trial) {
      const auto p = init_params(c, 400 + trial, v);
      const auto seg = oracle::random_segment(rng, c, 8);
      const auto ref = oracle::forward(p, seg, spec);
      const auto got = smoothness(p, seg, spec);
      double kink = std::min({got.relu, got.cosine_clamp, got.angle});
      if (is_phoneme_aware(v)) {
        kink = std::min(kink, got.argmax_gap);
        CHECK(kink == doctest::Approx(ref.kink_distance).epsilon(1e-8));
      } else {
        CHECK(kink >= ref.kink_distance - 1e-12);
      }
      if (ref.min_variance > 1e-6) {
        CHECK(got.variance == doctest::Approx(ref.min_variance).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("backward: alpha = 0 leaves the phoneme head untouched") {
  const auto c = oracle::tiny_config();
  std::mt19937_64 rng(16);
  for (LossVariant v : kAll) {
    const auto p = init_params(c, 17, v);
    const auto seg = oracle::random_segment(rng, c, 8);
    const auto g = backward(p, seg, spec_for(v), {0.0});
    for (double x : g.grads.phoneme_head.weight.data()) CHECK(x == 0.0);
    for (double x : g.grads.phoneme_head.bias) CHECK(x == 0.0);
  }
}

TEST_CASE("backward: saturated instance has near-zero gradient") {
  const auto c = oracle::tiny_config();
  auto p = init_params(c, 18, LossVariant::S);
  std::mt19937_64 rng(19);
  auto seg = oracle::random_segment(rng, c, 8);
  p.language.bias[seg.language] = 200.0;
  const auto g = backward(p, seg, MarginSpec::softmax(), {0.0});
  CHECK(g.loss.total.loss < 1e-30);
  for (auto t : g.grads.tensors()) {
    for (double x : t) CHECK(std::abs(x) < 1e-30);
  }
}

TEST_CASE("extract_embedding ignores the phoneme head") {
  const auto c = oracle::tiny_config();
  std::mt19937_64 rng(20);
  std::normal_distribution<double> g;
  auto p = init_params(c, 21);
  const auto seg = oracle::random_segment(rng, c, 10);
  const Vec base = extract_embedding(p, seg);
  CHECK(base.size() == c.encoder.embedding_dim);
  CHECK(extract_embedding(p, seg) == base);
  for (int trial = 0; trial < 20; ++trial) {
    for (double& v : p.phoneme_head.weight.data()) v = 10.0 * g(rng);
    for (double& v : p.phoneme_head.bias) v = 10.0 * g(rng);
    CHECK(extract_embedding(p, seg) == base);
  }
}

TEST_CASE("parameter bookkeeping") {
  const auto c = oracle::tiny_config();
  const auto p = init_params(c, 1);
  const auto names = p.tensor_names();
  CHECK(names.size() == p.tensors().size());
  CHECK(names.front() == "encoder.0.weight");
  CHECK(names.back() == "language.bias");
  std::size_t total = 0;
  for (auto t : p.tensors()) total += t.size();
  CHECK(total == p.parameter_count());
  const auto z = ModelParams::zeros_like(p);
  for (auto t : z.tensors()) {
    for (double v : t) CHECK(v == 0.0);
  }
  CHECK(init_params(c, 5).encoder[0].weight == init_params(c, 5).encoder[0].weight);
  CHECK(!(init_params(c, 5).encoder[0].weight == init_params(c, 6).encoder[0].weight));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "apm_test_model_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "checkpoint.json";
  auto c = oracle::tiny_config();
  c.normalize_embedding = false;
  auto p = init_params(c, 33, LossVariant::APMS);
  p.encoder[0].weight(0, 0) = 0.1 + 0.2;  // not representable in short decimal
  p.embedding.bias[0] = 1e-300;
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  CHECK(q.config.normalize_embedding == false);
  CHECK(q.config.encoder.dilations == c.encoder.dilations);
  const auto a = p.tensors();
  const auto b = q.tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    REQUIRE(a[k].size() == b[k].size());
    CHECK(std::equal(a[k].begin(), a[k].end(), b[k].begin()));
  }

  std::ofstream(dir / "bad.json") << R"({"format":"apm-checkpoint","version":99})";
  try {
    load_checkpoint(dir / "bad.json");
    FAIL("expected SchemaMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaMismatch);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), Error);
  std::filesystem::remove_all(dir);
}
