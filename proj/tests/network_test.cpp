#include <doctest.h>

#include <cmath>

#include "perturbnet/errors.hpp"
#include "perturbnet/network.hpp"

using namespace perturbnet;

namespace {

Network scalar_net(double w, double slope = 0.01, bool linear_output = false) {
  Network net;
  net.spec = NetworkSpec{{1, 1}, slope, false, linear_output};
  net.weights = {Matrix::Constant(1, 1, w)};
  net.decorrelation = {Matrix::Identity(1, 1)};
  return net;
}

} // namespace

TEST_CASE("init_network shapes and identity decorrelation") {
  const Network net = init_network(NetworkSpec{{4, 3}}, RngStream(1));
  REQUIRE(net.weights.size() == 1);
  CHECK(net.weights[0].rows() == 3);
  CHECK(net.weights[0].cols() == 4);
  REQUIRE(net.decorrelation.size() == 1);
  CHECK(net.decorrelation[0] == Matrix::Identity(4, 4));
}

TEST_CASE("init_network is deterministic in the stream") {
  const Network a = init_network(NetworkSpec{{8, 5, 3}}, RngStream(9).derive(2));
  const Network b = init_network(NetworkSpec{{8, 5, 3}}, RngStream(9).derive(2));
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    CHECK(a.weights[l] == b.weights[l]);
  }
}

TEST_CASE("init_network entries respect the fan bound") {
  // Bound evaluated independently from the fan formula.
  const double bound = std::sqrt(6.0 / (3072 + 10));
  CHECK(bound == doctest::Approx(0.04412).epsilon(1e-3));
  const Network net = init_network(NetworkSpec{{3072, 10}}, RngStream(3));
  CHECK(net.weights[0].cwiseAbs().maxCoeff() <= bound);
  // Draws should actually fill the range, not collapse near zero.
  CHECK(net.weights[0].cwiseAbs().maxCoeff() > 0.9 * bound);
}

TEST_CASE("clean forward pass, hand-evaluated single layer") {
  const Network net = scalar_net(2.0);
  Vector x0(1);
  x0 << -1.0;
  const ForwardTrace trace = forward(net, x0);
  CHECK(trace.preactivations[0](0, 0) == doctest::Approx(-2.0));
  CHECK(trace.outputs[0](0, 0) == doctest::Approx(-0.02));
}

TEST_CASE("noisy forward pass adds noise to the pre-activation") {
  const Network net = scalar_net(2.0);
  Vector x0(1);
  x0 << -1.0;
  NoiseBundle noise;
  noise.mode = NoiseMode::AllLayers;
  noise.variance = 1.0;
  noise.values = {Matrix::Constant(1, 1, 0.5)};
  const ForwardTrace trace = forward(net, x0, noise);
  CHECK(trace.preactivations[0](0, 0) == doctest::Approx(-1.5));
  CHECK(trace.outputs[0](0, 0) == doctest::Approx(-0.015));
}

TEST_CASE("zero noise bundle reproduces the clean pass") {
  const Network net = init_network(NetworkSpec{{6, 5, 4}}, RngStream(4));
  const Matrix x0 = RngStream(5).gaussian_matrix(6, 3, 1.0);
  NoiseBundle zero;
  zero.mode = NoiseMode::AllLayers;
  zero.variance = 1e-6;
  zero.values = {Matrix::Zero(5, 3), Matrix::Zero(4, 3)};
  const ForwardTrace clean = forward(net, x0);
  const ForwardTrace noisy = forward(net, x0, zero);
  for (int l = 0; l < 2; ++l) {
    CHECK(clean.outputs[l] == noisy.outputs[l]);
  }
}

TEST_CASE("identity decorrelation matrices are a bit-exact no-op") {
  NetworkSpec spec{{6, 5, 4}};
  Network plain = init_network(spec, RngStream(4));
  Network decor = plain;
  decor.spec.use_decorrelation = true; // R matrices are still identity
  const Matrix x0 = RngStream(5).gaussian_matrix(6, 3, 1.0);
  const ForwardTrace a = forward(plain, x0);
  const ForwardTrace b = forward(decor, x0);
  for (int l = 0; l < 2; ++l) {
    CHECK(a.preactivations[l] == b.preactivations[l]);
    CHECK(a.outputs[l] == b.outputs[l]);
  }
}

TEST_CASE("small perturbations act linearly away from kinks") {
  const Network net = init_network(NetworkSpec{{8, 6, 4}}, RngStream(12));
  const Matrix x0 = RngStream(13).gaussian_matrix(8, 1, 1.0);
  NoiseBundle noise = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(14), 1);
  NoiseBundle half = noise;
  for (Matrix& m : half.values) {
    m *= 0.5;
  }
  const Matrix clean = forward(net, x0).output();
  const double full_delta = (forward(net, x0, noise).output() - clean).norm();
  const double half_delta = (forward(net, x0, half).output() - clean).norm();
  CHECK(half_delta == doctest::Approx(0.5 * full_delta).epsilon(0.01));
}

TEST_CASE("single-layer bundles mask all other layers") {
  const Network net = init_network(NetworkSpec{{4, 3, 3, 2}}, RngStream(6));
  const NoiseBundle bundle = sample_noise(net, NoiseMode::SingleLayer, 1e-4, RngStream(7), 2, 2);
  CHECK(bundle.values[0].isZero(0.0));
  CHECK_FALSE(bundle.values[1].isZero(0.0));
  CHECK(bundle.values[2].isZero(0.0));

  // delta a_k is exactly nu_l at the perturbed layer and zero before it.
  const Matrix x0 = RngStream(8).gaussian_matrix(4, 2, 1.0);
  const ForwardTrace clean = forward(net, x0);
  const ForwardTrace noisy = forward(net, x0, bundle);
  CHECK(noisy.preactivations[0] == clean.preactivations[0]);
  // a~_2 - a_2 = nu_2 up to one rounding of the addition.
  CHECK((noisy.preactivations[1] - clean.preactivations[1] - bundle.values[1])
            .cwiseAbs()
            .maxCoeff() < 1e-15);
}

TEST_CASE("single-unit bundles have exactly one nonzero row") {
  const Network net = init_network(NetworkSpec{{2, 3}}, RngStream(9));
  const NoiseBundle bundle = sample_noise(net, NoiseMode::SingleUnit, 1e-4, RngStream(10), 1, 1, 0);
  CHECK(bundle.values[0].rows() == 3);
  CHECK(bundle.values[0](0, 0) != 0.0);
  CHECK(bundle.values[0](1, 0) == 0.0);
  CHECK(bundle.values[0](2, 0) == 0.0);
}

TEST_CASE("sample_noise pooled variance matches sigma^2") {
  const Network net = init_network(NetworkSpec{{4, 250, 250}}, RngStream(15));
  const NoiseBundle bundle = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(16), 200);
  double sum = 0.0, sq = 0.0;
  long count = 0;
  for (const Matrix& m : bundle.values) {
    sum += m.sum();
    sq += m.squaredNorm();
    count += m.size();
  }
  const double mean = sum / static_cast<double>(count);
  const double var = sq / static_cast<double>(count) - mean * mean;
  CHECK(count == 100000);
  CHECK(var == doctest::Approx(1e-6).epsilon(0.05));
}

TEST_CASE("sample_noise validates indices and variance") {
  const Network net = init_network(NetworkSpec{{4, 3, 2}}, RngStream(17));
  CHECK_THROWS_AS(sample_noise(net, NoiseMode::SingleLayer, 1e-6, RngStream(1), 1, 3),
                  InvalidParameter);
  CHECK_THROWS_AS(sample_noise(net, NoiseMode::SingleUnit, 1e-6, RngStream(1), 1, 1, 5),
                  InvalidParameter);
  CHECK_THROWS_AS(sample_noise(net, NoiseMode::AllLayers, -1e-6, RngStream(1)), InvalidParameter);
}

TEST_CASE("forward validates shapes") {
  const Network net = init_network(NetworkSpec{{4, 3}}, RngStream(18));
  CHECK_THROWS_AS(forward(net, Vector(Vector::Zero(5))), InvalidParameter);
}

TEST_CASE("categorical cross-entropy") {
  Vector uniform_logits = Vector::Zero(10);
  Vector target = Vector::Zero(10);
  target[4] = 1.0;
  CHECK(loss_cce(uniform_logits, target) == doctest::Approx(std::log(10.0)));

  Vector big(2), hot0(2);
  big << 1000.0, 0.0;
  hot0 << 1.0, 0.0;
  CHECK(loss_cce(big, hot0) == doctest::Approx(0.0).epsilon(1e-12));

  Vector logits(2);
  logits << 1.0, 0.0;
  CHECK(loss_cce(logits, hot0) == doctest::Approx(0.313262).epsilon(1e-5));

  Vector bad(2);
  bad << 0.5, 0.5;
  CHECK_THROWS_AS(loss_cce(logits, bad), InvalidParameter);
}

TEST_CASE("mean squared error is a squared-error sum") {
  Vector a(2), b(2);
  a << 1.0, 0.0;
  b << 0.0, 0.0;
  CHECK(loss_mse(a, a) == 0.0);
  CHECK(loss_mse(a, b) == doctest::Approx(1.0));
  a << 1.0, 2.0;
  CHECK(loss_mse(a, b) == doctest::Approx(5.0));
  CHECK_THROWS_AS(loss_mse(a, Vector(Vector::Zero(3))), InvalidParameter);
}
