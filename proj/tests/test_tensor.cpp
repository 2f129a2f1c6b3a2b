#include <doctest.h>

#include <cstring>

#include "cae/adam.hpp"
#include "cae/conv.hpp"
#include "cae/gdn.hpp"
#include "cae/params.hpp"
#include "cae/stack.hpp"
#include "support.hpp"

using namespace cae;
using namespace testing_support;

namespace {

ConvLayerSpec spec(std::size_t filters, std::size_t k, std::size_t stride, Direction d,
                   Padding p = Padding::same) {
  return ConvLayerSpec{filters, k, k, stride, d, Activation::linear, p};
}

std::vector<ConvLayerSpec> oracle_specs() {
  return {spec(3, 3, 1, Direction::down), spec(4, 5, 2, Direction::down), spec(2, 2, 2, Direction::down),
          spec(3, 3, 2, Direction::up),   spec(2, 5, 2, Direction::up),   spec(3, 2, 1, Direction::down, Padding::valid),
          spec(2, 3, 1, Direction::up, Padding::valid), spec(3, 4, 3, Direction::down)};
}

}  // namespace

TEST_CASE("tensor construction checks the data length") {
  CHECK_THROWS_AS(Tensor(Shape3{2, 2, 2}, std::vector<double>(7)), ShapeError);
  Tensor t(Shape3{2, 3, 4}, std::vector<double>(24, 1.5));
  CHECK(t.size() == 24);
  CHECK(t.at(1, 2, 3) == 1.5);
}

TEST_CASE("conv2d output shapes") {
  Tensor x(64, 64, 3);
  const auto s = spec(32, 5, 2, Direction::down);
  std::vector<double> w(conv_weight_count(s, 3), 0.0), b(32, 0.0);
  CHECK(conv2d(x, w, b, s).shape() == Shape3{32, 32, 32});

  const auto u = spec(3, 5, 2, Direction::up);
  Tensor y(4, 4, 8);
  std::vector<double> wu(conv_weight_count(u, 8), 0.0), bu(3, 0.0);
  CHECK(conv2d(y, wu, bu, u).shape() == Shape3{8, 8, 3});

  Tensor odd(5, 7, 1);
  const auto s3 = spec(1, 3, 2, Direction::down);
  std::vector<double> w3(9, 0.0), b3(1, 0.0);
  CHECK(conv2d(odd, w3, b3, s3).shape() == Shape3{3, 4, 1});
}

TEST_CASE("1x1 identity filter reproduces the input") {
  Tensor x(1, 1, 1);
  x.at(0, 0, 0) = 0.731;
  const auto s = spec(1, 1, 1, Direction::down);
  std::vector<double> w{1.0}, b{0.0};
  CHECK(conv2d(x, w, b, s).at(0, 0, 0) == 0.731);
}

TEST_CASE("conv2d matches a nested-loop oracle") {
  std::mt19937_64 rng(11);
  for (const auto& s : oracle_specs()) {
    const Tensor x = random_tensor(5, 5, 2, rng);
    const auto w = random_vector(conv_weight_count(s, 2), rng);
    const auto b = random_vector(s.filters, rng);
    const Tensor ref = naive_conv(x, w, b, s);
    for (ConvBackend be : {ConvBackend::fast, ConvBackend::reference}) {
      const Tensor out = conv2d(x, w, b, s, be);
      REQUIRE(out.shape() == ref.shape());
      double worst = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, std::fabs(out.data()[i] - ref.data()[i]));
      CHECK(worst < 1e-12);
    }
  }
}

TEST_CASE("conv2d rejects mismatched channels and names the dimension") {
  Tensor x(4, 4, 3);
  const auto s = spec(2, 3, 1, Direction::down);
  std::vector<double> w(conv_weight_count(s, 2), 0.0), b(2, 0.0);
  try {
    conv2d(x, w, b, s);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("channels") != std::string::npos);
  }
  std::vector<double> wok(conv_weight_count(s, 3), 0.0), bbad(3, 0.0);
  CHECK_THROWS_AS(conv2d(x, wok, bbad, s), ShapeError);
}

TEST_CASE("transposed convolution is the adjoint of the strided convolution") {
  std::mt19937_64 rng(5);
  for (std::size_t k : {2u, 3u, 5u}) {
    for (std::size_t stride : {1u, 2u}) {
      const auto down = spec(3, k, stride, Direction::down);
      const auto up = spec(2, k, stride, Direction::up);  // shares the [k][k][2][3] weights
      const Tensor x = random_tensor(8, 8, 2, rng);
      const auto w = random_vector(conv_weight_count(down, 2), rng);
      const std::vector<double> zb3(3, 0.0), zb2(2, 0.0);
      const Tensor dx = conv2d(x, w, zb3, down);
      const Tensor y = random_tensor(dx.height(), dx.width(), 3, rng);
      const Tensor uy = conv2d(y, w, zb2, up);
      REQUIRE(uy.shape() == x.shape());
      CHECK(std::fabs(dot(dx, y) - dot(x, uy)) < 1e-10);
    }
  }
}

TEST_CASE("conv2d is bit-identical across repeated runs") {
  std::mt19937_64 rng(2);
  const auto s = spec(6, 5, 2, Direction::down);
  const Tensor x = random_tensor(32, 32, 4, rng);
  const auto w = random_vector(conv_weight_count(s, 4), rng);
  const auto b = random_vector(6, rng);
  const Tensor a = conv2d(x, w, b, s);
  const Tensor c = conv2d(x, w, b, s);
  CHECK(std::memcmp(a.data(), c.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("conv2d backward: zero output gradient gives zero gradients") {
  std::mt19937_64 rng(3);
  const auto s = spec(3, 3, 2, Direction::down);
  const Tensor x = random_tensor(6, 6, 2, rng);
  const auto w = random_vector(conv_weight_count(s, 2), rng);
  Tensor gout(3, 3, 3);
  Tensor gin;
  std::vector<double> gw(w.size(), 0.0), gb(3, 0.0);
  conv2d_backward(gout, x, w, s, &gin, gw, gb);
  CHECK(std::all_of(gin.values().begin(), gin.values().end(), [](double v) { return v == 0.0; }));
  CHECK(std::all_of(gw.begin(), gw.end(), [](double v) { return v == 0.0; }));
  CHECK(std::all_of(gb.begin(), gb.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("conv2d gradients match central differences") {
  std::mt19937_64 rng(17);
  for (const auto& s : oracle_specs()) {
    Tensor x = random_tensor(5, 5, 2, rng);
    auto w = random_vector(conv_weight_count(s, 2), rng);
    auto b = random_vector(s.filters, rng);
    const Tensor probe = random_tensor(conv_output_shape(s, x.shape()).h, conv_output_shape(s, x.shape()).w, s.filters, rng);
    auto loss = [&] { return dot(conv2d(x, w, b, s), probe); };
    Tensor gin;
    std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
    conv2d_backward(probe, x, w, s, &gin, gw, gb);
    for (std::size_t i = 0; i < x.size(); i += 3) CHECK(rel_err(gin.data()[i], central_diff(loss, &x.data()[i])) < 1e-4);
    for (std::size_t i = 0; i < w.size(); i += 5) CHECK(rel_err(gw[i], central_diff(loss, &w[i])) < 1e-4);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(rel_err(gb[i], central_diff(loss, &b[i])) < 1e-4);
  }
}

TEST_CASE("gdn closed-form cases") {
  Tensor x(2, 2, 3);
  std::mt19937_64 rng(1);
  x = random_tensor(2, 2, 3, rng);
  const std::vector<double> zero_gamma(9, 0.0), ones(3, 1.0);
  const Tensor y = gdn(x, zero_gamma, ones, false);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor one(1, 1, 1);
  one.at(0, 0, 0) = 2.0;
  const std::vector<double> g1{1.0}, b0{0.0};
  CHECK(gdn(one, g1, b0, false).at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("igdn undoes gdn for small inputs") {
  // With beta = 1 the two normalizers cancel to first order in gamma.
  for (double gamma : {0.0, 1e-4, 1e-3}) {
    Tensor x(1, 41, 1);
    for (std::size_t i = 0; i < 41; ++i) x.at(0, i, 0) = -1.0 + 0.05 * static_cast<double>(i);
    const std::vector<double> g{gamma}, b{1.0};
    const Tensor back = gdn(gdn(x, g, b, false), g, b, true);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::fabs(back.data()[i] - x.data()[i]) < 1e-6);
  }
}

TEST_CASE("gdn parameter validation") {
  Tensor x(1, 1, 1, 0.5);
  const std::vector<double> g{0.1};
  CHECK_THROWS_AS(gdn(x, g, std::vector<double>{-1e-3}, false), std::invalid_argument);
  CHECK_THROWS_AS(gdn(x, std::vector<double>{-0.1}, std::vector<double>{1.0}, false), std::invalid_argument);
  Tensor zero(1, 1, 1, 0.0);
  CHECK_THROWS_AS(gdn(zero, g, std::vector<double>{0.0}, false), std::domain_error);
  CHECK_THROWS_AS(gdn(x, std::vector<double>{0.1, 0.2}, std::vector<double>{1.0}, false), ShapeError);
}

TEST_CASE("gdn gradients match central differences") {
  std::mt19937_64 rng(23);
  for (bool inverse : {false, true}) {
    Tensor x = random_tensor(2, 3, 3, rng);
    auto gamma = random_vector(9, rng, 0.01, 0.5);
    auto beta = random_vector(3, rng, 0.5, 1.5);
    const Tensor probe = random_tensor(2, 3, 3, rng);
    auto loss = [&] { return dot(gdn(x, gamma, beta, inverse), probe); };
    std::vector<double> gg(9, 0.0), gb(3, 0.0);
    const Tensor gx = gdn_backward(probe, x, gamma, beta, inverse, gg, gb);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(rel_err(gx.data()[i], central_diff(loss, &x.data()[i])) < 1e-4);
    for (std::size_t i = 0; i < 9; ++i) CHECK(rel_err(gg[i], central_diff(loss, &gamma[i])) < 1e-4);
    for (std::size_t i = 0; i < 3; ++i) CHECK(rel_err(gb[i], central_diff(loss, &beta[i])) < 1e-4);
  }
}

TEST_CASE("stack gradients match central differences for every activation") {
  std::mt19937_64 rng(31);
  for (Activation act : {Activation::linear, Activation::relu, Activation::exp, Activation::gdn, Activation::igdn}) {
    ParamStore store;
    Stack st;
    st.add_layer(store, "a", ConvLayerSpec{3, 3, 3, 2, Direction::down, act, Padding::same}, 2);
    st.add_layer(store, "b", ConvLayerSpec{2, 3, 3, 2, Direction::up, Activation::linear, Padding::same}, 3);
    st.initialize(store, rng, 0.5);
    for (auto& p : store.all()) {
      for (double& v : p.value) v += 0.05 * std::uniform_real_distribution<double>(-1, 1)(rng);
    }
    Tensor x = random_tensor(4, 4, 2, rng, -0.5, 0.5);
    const Tensor probe = random_tensor(4, 4, 2, rng);
    auto loss = [&] { return dot(st.forward(store, x), probe); };
    StackTape tape;
    st.forward(store, x, &tape);
    store.zero_grad();
    const Tensor gx = st.backward(store, tape, probe);
    for (std::size_t i = 0; i < x.size(); i += 2) CHECK(rel_err(gx.data()[i], central_diff(loss, &x.data()[i])) < 1e-4);
    for (auto& p : store.all()) {
      for (std::size_t i = 0; i < p.size(); i += 7) {
        INFO("param " << p.name << "[" << i << "]");
        CHECK(rel_err(p.grad[i], central_diff(loss, &p.value[i])) < 1e-4);
      }
    }
  }
}

TEST_CASE("stack backward requires a recorded forward pass") {
  ParamStore store;
  Stack st;
  st.add_layer(store, "a", ConvLayerSpec{1, 1, 1, 1, Direction::down, Activation::linear, Padding::same}, 1);
  StackTape tape;
  CHECK_THROWS_AS(st.backward(store, tape, Tensor(1, 1, 1)), std::logic_error);
}

TEST_CASE("linear chain gradient is the product of transposed weights") {
  std::mt19937_64 rng(8);
  ParamStore store;
  Stack st;
  st.add_layer(store, "a", ConvLayerSpec{3, 1, 1, 1, Direction::down, Activation::linear, Padding::same}, 2);
  st.add_layer(store, "b", ConvLayerSpec{4, 1, 1, 1, Direction::down, Activation::linear, Padding::same}, 3);
  st.initialize(store, rng);
  const Tensor x = random_tensor(1, 1, 2, rng);
  const Tensor g = random_tensor(1, 1, 4, rng);
  StackTape tape;
  st.forward(store, x, &tape);
  const Tensor gx = st.backward(store, tape, g);
  const auto& w1 = store[st.layers()[0].weight].value;  // [2][3]
  const auto& w2 = store[st.layers()[1].weight].value;  // [3][4]
  for (std::size_t i = 0; i < 2; ++i) {
    double expect = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 4; ++k) expect += w1[i * 3 + j] * w2[j * 4 + k] * g.data()[k];
    }
    CHECK(gx.data()[i] == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("adam updates") {
  ParamStore ps;
  const std::size_t a = ps.add("a", {3}, 0.25);
  AdamState st;
  st.attach(ps);

  SUBCASE("zero gradient leaves parameters exactly unchanged") {
    adam_step(ps, st);
    CHECK(ps[a].value == std::vector<double>(3, 0.25));
    CHECK(st.step == 1);
  }
  SUBCASE("first step from zero moments, g = 1, lr = 1e-3") {
    st.learning_rate = 1e-3;
    ps[a].grad = {1.0, 1.0, 1.0};
    adam_step(ps, st);
    // m_hat = 1, v_hat = 1: delta = -lr * 1 / (1 + eps).
    const double expect = 0.25 - 1e-3 / (1.0 + 1e-8);
    CHECK(ps[a].value[0] == doctest::Approx(expect).epsilon(1e-15));
  }
  SUBCASE("constant gradient drives the parameter monotonically against it") {
    double prev = ps[a].value[0];
    for (int i = 0; i < 50; ++i) {
      ps[a].grad = {2.0, -2.0, 0.0};
      adam_step(ps, st);
      CHECK(ps[a].value[0] < prev);
      prev = ps[a].value[0];
    }
    CHECK(ps[a].value[1] > 0.25);
    CHECK(ps[a].value[2] == 0.25);
  }
  SUBCASE("non-finite gradient aborts the step before any update") {
    ps[a].grad = {1.0, std::nan(""), 1.0};
    CHECK_THROWS_AS(adam_step(ps, st), std::runtime_error);
    CHECK(ps[a].value == std::vector<double>(3, 0.25));
    CHECK(st.step == 0);
  }
}

TEST_CASE("weight container round-trips bit-exactly") {
  std::mt19937_64 rng(4);
  WeightFile wf;
  wf.config_text = "profile=tiny\nN=32\n";
  wf.entries.push_back(Param{"x.w", {2, 3}, random_vector(6, rng), {}});
  wf.entries.push_back(Param{"x.b", {1}, {-0.0}, {}});
  wf.entries.push_back(Param{"tiny", {1}, {5e-324}, {}});
  const auto bytes = serialize_weights(wf);
  const WeightFile back = deserialize_weights(bytes);
  CHECK(back.config_text == wf.config_text);
  REQUIRE(back.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entries[i].name == wf.entries[i].name);
    CHECK(back.entries[i].shape == wf.entries[i].shape);
    CHECK(std::memcmp(back.entries[i].value.data(), wf.entries[i].value.data(), wf.entries[i].value.size() * 8) == 0);
  }
  CHECK(serialize_weights(back) == bytes);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS(deserialize_weights(truncated));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(deserialize_weights(bad));
}
