#include <doctest.h>

#include <cmath>

#include "perturbnet/errors.hpp"
#include "perturbnet/learners.hpp"
#include "perturbnet/oracle.hpp"

using namespace perturbnet;

namespace {

Network linear_scalar_net(double w) {
  Network net;
  net.spec = NetworkSpec{{1, 1}, 0.01, false, true};
  net.weights = {Matrix::Constant(1, 1, w)};
  net.decorrelation = {Matrix::Identity(1, 1)};
  return net;
}

Matrix one_hot(int classes, int hot) {
  Matrix t = Matrix::Zero(classes, 1);
  t(hot, 0) = 1.0;
  return t;
}

} // namespace

TEST_CASE("bp_update is zero at an exact MSE optimum") {
  const Network net = linear_scalar_net(1.0);
  Vector x0(1);
  x0 << 1.0;
  const ForwardTrace trace = forward(net, x0);
  const UpdateSet u = bp_update(net, trace, trace.output(), LossKind::Mse);
  CHECK(u.layers[0].isZero(0.0));
}

TEST_CASE("bp_update hand chain rule on a scalar linear net") {
  // L = a^2 with a = w x; g = dL/da = 2a = 2, dW = g x = 2.
  const Network net = linear_scalar_net(1.0);
  Vector x0(1);
  x0 << 1.0;
  const UpdateSet u =
      bp_update(net, forward(net, x0), Matrix::Zero(1, 1), LossKind::Mse);
  CHECK(u.layers[0](0, 0) == doctest::Approx(2.0));
}

TEST_CASE("bp_update agrees with central differences on a random net") {
  const Network net = init_network(NetworkSpec{{10, 8, 8, 4}}, RngStream(21));
  RngStream in = RngStream(22);
  Matrix x0 = in.gaussian_matrix(10, 3, 1.0);
  while (!smooth_at(net, x0)) {
    x0 = in.gaussian_matrix(10, 3, 1.0);
  }
  Matrix targets = Matrix::Zero(4, 3);
  for (int c = 0; c < 3; ++c) {
    targets(c, c) = 1.0;
  }
  const UpdateSet bp = bp_update(net, forward(net, x0), targets, LossKind::Cce);
  const UpdateSet fd = fd_gradient(net, x0, targets, LossKind::Cce, 1e-5);
  CHECK(angle_degrees(bp, fd) < 1e-6 * 180.0);
  for (std::size_t l = 0; l < bp.layers.size(); ++l) {
    const double scale = bp.layers[l].cwiseAbs().maxCoeff();
    CHECK((bp.layers[l] - fd.layers[l]).cwiseAbs().maxCoeff() / scale < 1e-6);
  }
}

TEST_CASE("np_update hand evaluation and zero loss differential") {
  // dW_1 = deltaL * (eps / sigma^2) * x*^T
  ForwardTrace clean, noisy;
  clean.input = Matrix::Zero(2, 1);
  noisy.input = clean.input;
  Matrix x_star(2, 1);
  x_star << 1.0, -1.0;
  clean.decorrelated_inputs = {x_star};
  clean.preactivations = {Matrix::Zero(1, 1)};
  clean.outputs = {Matrix::Zero(1, 1)};
  noisy.noise.mode = NoiseMode::AllLayers;
  noisy.noise.variance = 1e-6;
  noisy.noise.values = {Matrix::Constant(1, 1, 1e-3)};

  Vector dl(1);
  dl << 2.0;
  const UpdateSet u = np_update(clean, noisy, dl, 1e-6);
  CHECK(u.layers[0](0, 0) == doctest::Approx(2000.0));
  CHECK(u.layers[0](0, 1) == doctest::Approx(-2000.0));

  dl << 0.0;
  CHECK(np_update(clean, noisy, dl, 1e-6).layers[0].isZero(0.0));
}

TEST_CASE("np_update Monte-Carlo mean approaches the BP gradient") {
  const Network net = linear_scalar_net(1.0);
  Vector x0(1);
  x0 << 1.0;
  const Matrix target = Matrix::Zero(1, 1);
  const ForwardTrace clean = forward(net, x0);
  const double clean_loss = loss_mse(clean.output().col(0), target.col(0));

  RngStream stream = RngStream(23);
  double mean = 0.0;
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) {
    const NoiseBundle bundle =
        sample_noise(net, NoiseMode::AllLayers, 1e-6, stream.derive(i), 1);
    const ForwardTrace noisy = forward(net, x0, bundle);
    Vector dl(1);
    dl << loss_mse(noisy.output().col(0), target.col(0)) - clean_loss;
    mean += np_update(clean, noisy, dl, 1e-6).layers[0](0, 0);
  }
  mean /= draws;
  CHECK(mean == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("inp_update recovers the scalar gradient as sigma shrinks") {
  // deltaL = (1+v)^2 - 1, dW = deltaL * v / v^2 = 2 + v.
  const Network net = linear_scalar_net(1.0);
  Matrix x0 = Matrix::Constant(1, 1, 1.0);
  const Matrix target = Matrix::Zero(1, 1);
  const UpdateSet u = inp_update(net, x0, target, 1e-10, RngStream(24), LossKind::Mse);
  CHECK(u.layers[0](0, 0) == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("inp_update counts L + 1 forward passes per sample") {
  const Network net = init_network(NetworkSpec{{6, 5, 4, 3}}, RngStream(25));
  const Matrix x0 = RngStream(26).gaussian_matrix(6, 7, 1.0);
  Matrix targets = Matrix::Zero(3, 7);
  for (int c = 0; c < 7; ++c) {
    targets(c % 3, c) = 1.0;
  }
  long passes = 0;
  inp_update(net, x0, targets, 1e-6, RngStream(27), LossKind::Cce, &passes);
  CHECK(passes == (net.depth() + 1) * 7);
}

TEST_CASE("single-layer ANP equals the INP formula bit-for-bit") {
  // With W = 0 the clean pre-activation is exactly zero, so delta a == v.
  Network net;
  net.spec = NetworkSpec{{2, 3}, 0.01, false, true};
  net.weights = {Matrix::Zero(3, 2)};
  net.decorrelation = {Matrix::Identity(2, 2)};
  Matrix x0(2, 1);
  x0 << 1.0, -0.5;
  const Matrix target = one_hot(3, 1);

  const NoiseBundle bundle = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(28), 1);
  const ForwardTrace clean = forward(net, x0);
  const ForwardTrace noisy = forward(net, x0, bundle);
  const UpdateSet anp = anp_update(clean, noisy, LossKind::Cce, target);

  // INP update computed from the identical ingredients.
  const Vector v = bundle.values[0].col(0);
  const double dl = loss_cce(noisy.output().col(0), target.col(0)) -
                    loss_cce(clean.output().col(0), target.col(0));
  Vector scale(1);
  scale << dl / v.squaredNorm() * 3.0;
  const Matrix inp = (bundle.values[0] * scale.asDiagonal()) *
                     clean.decorrelated_inputs[0].transpose();
  CHECK(anp.layers[0] == inp);
}

TEST_CASE("single-layer NP and ANP updates are parallel") {
  const Network net = init_network(NetworkSpec{{4, 3}}, RngStream(29));
  const Matrix x0 = RngStream(30).gaussian_matrix(4, 1, 1.0);
  const Matrix target = one_hot(3, 0);
  const ForwardTrace clean = forward(net, x0);
  const NoiseBundle bundle = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(31), 1);
  const ForwardTrace noisy = forward(net, x0, bundle);

  const Vector dl = loss_columns(LossKind::Cce, noisy.output(), target) -
                    loss_columns(LossKind::Cce, clean.output(), target);
  const UpdateSet np = np_update(clean, noisy, dl, 1e-6);
  const UpdateSet anp = anp_update(clean, noisy, LossKind::Cce, target);
  CHECK(angle_degrees(np, anp) < 1e-5);
}

TEST_CASE("layer-1 NP and ANP stay parallel in deep nets") {
  const Network net = init_network(NetworkSpec{{6, 5, 5, 4}}, RngStream(32));
  const Matrix x0 = RngStream(33).gaussian_matrix(6, 1, 1.0);
  const Matrix targets = one_hot(4, 0);
  const ForwardTrace clean = forward(net, x0);
  const NoiseBundle bundle = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(34), 1);
  const ForwardTrace noisy = forward(net, x0, bundle);
  const Vector dl = loss_columns(LossKind::Cce, noisy.output(), targets) -
                    loss_columns(LossKind::Cce, clean.output(), targets);
  const UpdateSet np = np_update(clean, noisy, dl, 1e-6);
  const UpdateSet anp = anp_update(clean, noisy, LossKind::Cce, targets);
  // delta a_1 equals eps_1 up to rounding, so layer 1 differs only by the
  // positive normalization ratio.
  CHECK(layer_angle_degrees(np, anp, 1) < 1e-5);
}

TEST_CASE("update rules are positively homogeneous in the loss differential") {
  ForwardTrace clean, noisy;
  clean.input = Matrix::Zero(3, 1);
  noisy.input = clean.input;
  clean.decorrelated_inputs = {RngStream(35).gaussian_matrix(3, 1, 1.0)};
  clean.preactivations = {Matrix::Zero(2, 1)};
  clean.outputs = {Matrix::Zero(2, 1)};
  noisy.noise.mode = NoiseMode::AllLayers;
  noisy.noise.variance = 1e-6;
  noisy.noise.values = {RngStream(36).gaussian_matrix(2, 1, 1e-6)};

  Vector dl(1);
  dl << 0.7;
  const UpdateSet base = np_update(clean, noisy, dl, 1e-6);
  Vector scaled_dl = 3.0 * dl;
  UpdateSet scaled = np_update(clean, noisy, scaled_dl, 1e-6);
  CHECK((scaled.layers[0] - 3.0 * base.layers[0]).norm() < 1e-12 * base.layers[0].norm());
  CHECK(angle_degrees(base, scaled) < 1e-5);
}

TEST_CASE("batch update equals the mean of per-sample updates") {
  const Network net = init_network(NetworkSpec{{5, 4, 3}}, RngStream(37));
  const Matrix x0 = RngStream(38).gaussian_matrix(5, 4, 1.0);
  Matrix targets = Matrix::Zero(3, 4);
  for (int c = 0; c < 4; ++c) {
    targets(c % 3, c) = 1.0;
  }
  const NoiseBundle bundle = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(39), 4);
  const ForwardTrace clean = forward(net, x0);
  const ForwardTrace noisy = forward(net, x0, bundle);
  const Vector dl = loss_columns(LossKind::Cce, noisy.output(), targets) -
                    loss_columns(LossKind::Cce, clean.output(), targets);
  const UpdateSet batch = np_update(clean, noisy, dl, 1e-6);

  UpdateSet mean = UpdateSet::zeros_like(net);
  for (int s = 0; s < 4; ++s) {
    NoiseBundle one;
    one.mode = NoiseMode::AllLayers;
    one.variance = 1e-6;
    for (const Matrix& m : bundle.values) {
      one.values.push_back(m.col(s));
    }
    const ForwardTrace c1 = forward(net, Matrix(x0.col(s)));
    const ForwardTrace n1 = forward(net, Matrix(x0.col(s)), one);
    Vector d1(1);
    d1 << dl[s];
    mean += np_update(c1, n1, d1, 1e-6);
  }
  mean *= 0.25;
  for (std::size_t l = 0; l < batch.layers.size(); ++l) {
    CHECK((batch.layers[l] - mean.layers[l]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("double-noisy differences are antisymmetric and reject equal bundles") {
  const Network net = init_network(NetworkSpec{{4, 3, 2}}, RngStream(40));
  const Matrix x0 = RngStream(41).gaussian_matrix(4, 1, 1.0);
  const Matrix target = one_hot(2, 0);
  const NoiseBundle b1 = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(42), 1);
  const NoiseBundle b2 = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(43), 1);
  const ForwardTrace p1 = forward(net, x0, b1);
  const ForwardTrace p2 = forward(net, x0, b2);

  const ActivityDiff fwd = double_noisy_differences(p1, p2, LossKind::Cce, target);
  const ActivityDiff rev = double_noisy_differences(p2, p1, LossKind::Cce, target);
  CHECK(fwd.delta_loss[0] == doctest::Approx(-rev.delta_loss[0]));
  for (std::size_t l = 0; l < fwd.delta_preact.size(); ++l) {
    CHECK(fwd.delta_preact[l] == Matrix(-rev.delta_preact[l]));
  }

  CHECK_THROWS_AS(double_noisy_differences(p1, p1, LossKind::Cce, target), DegenerateInput);
}

TEST_CASE("anp_update throws on zero activity difference, zero on zero deltaL") {
  const Network net = init_network(NetworkSpec{{3, 2}}, RngStream(44));
  const Matrix x0 = RngStream(45).gaussian_matrix(3, 1, 1.0);
  const ForwardTrace clean = forward(net, x0);
  ActivityDiff diff;
  diff.delta_preact = {Matrix::Zero(2, 1)};
  diff.delta_loss = Vector::Zero(1);
  CHECK_THROWS_AS(anp_update_from_diff(clean, diff, 2.0), DegenerateInput);

  diff.delta_preact = {Matrix::Constant(2, 1, 0.5)};
  CHECK(anp_update_from_diff(clean, diff, 2.0).layers[0].isZero(0.0));
}

TEST_CASE("resample_update basics") {
  const Network net = init_network(NetworkSpec{{3, 2}}, RngStream(46));
  UpdateSet fixed = UpdateSet::zeros_like(net);
  fixed.layers[0].setConstant(1.5);
  const UpdateSet once = resample_update([&](int) { return fixed; }, 1);
  CHECK(once.layers[0] == fixed.layers[0]);

  const UpdateSet zeros =
      resample_update([&](int) { return UpdateSet::zeros_like(net); }, 100);
  CHECK(zeros.layers[0].isZero(0.0));

  int calls = 0;
  resample_update([&](int) { ++calls; return fixed; }, 7);
  CHECK(calls == 7);
}

TEST_CASE("decorrelation_step hand evaluations") {
  Matrix r = Matrix::Identity(2, 2);
  Matrix x(2, 1);
  x << 1.0, 0.0;
  CHECK(decorrelation_step(r, x, 0.1) == r);

  x << 1.0, 1.0;
  const Matrix updated = decorrelation_step(r, x, 0.1);
  CHECK(updated(0, 0) == doctest::Approx(1.0));
  CHECK(updated(0, 1) == doctest::Approx(-0.1));
  CHECK(updated(1, 0) == doctest::Approx(-0.1));
  CHECK(updated(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("decorrelation drives off-diagonal covariance down") {
  // Correlated batch: x = A z with a deliberately non-orthogonal A.
  RngStream stream = RngStream(47);
  const int dim = 8, n = 256;
  Matrix a = stream.gaussian_matrix(dim, dim, 1.0);
  a += 0.8 * Matrix::Ones(dim, dim);
  const Matrix x = a * stream.gaussian_matrix(dim, n, 1.0);

  const auto off_diag_ms = [&](const Matrix& r) {
    const Matrix xs = r * x;
    Matrix cov = (xs * xs.transpose()) / static_cast<double>(n);
    cov.diagonal().setZero();
    return cov.squaredNorm() / static_cast<double>(dim * (dim - 1));
  };

  Matrix r = Matrix::Identity(dim, dim);
  const double initial = off_diag_ms(r);
  int improved = 0;
  double prev = initial;
  const int steps = 100;
  for (int i = 0; i < steps; ++i) {
    r = decorrelation_step(r, r * x, 1e-3);
    // The update consumes x* = R x from before the step.
    const double now = off_diag_ms(r);
    if (now < prev) {
      ++improved;
    }
    prev = now;
  }
  CHECK(improved >= 90);
  CHECK(prev < 0.5 * initial);
}

TEST_CASE("adam_step zero update and first-step magnitude") {
  Network net = linear_scalar_net(1.0);
  AdamState state = AdamState::for_network(net);

  UpdateSet zero = UpdateSet::zeros_like(net);
  adam_step(state, zero, 1e-3, net);
  CHECK(net.weights[0](0, 0) == 1.0);
  CHECK(state.t == 1);

  UpdateSet g = UpdateSet::zeros_like(net);
  g.layers[0].setConstant(4.0);
  Network fresh = linear_scalar_net(1.0);
  AdamState fresh_state = AdamState::for_network(fresh);
  adam_step(fresh_state, g, 1e-3, fresh);
  // Bias-corrected first step is lr * g / (|g| + eps) = lr in magnitude.
  CHECK(fresh.weights[0](0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
}

TEST_CASE("adam trajectories are deterministic") {
  Network a = init_network(NetworkSpec{{4, 3}}, RngStream(48));
  Network b = a;
  AdamState sa = AdamState::for_network(a);
  AdamState sb = AdamState::for_network(b);
  RngStream ga = RngStream(49), gb = RngStream(49);
  for (int i = 0; i < 5; ++i) {
    UpdateSet ua = UpdateSet::zeros_like(a);
    ua.layers[0] = ga.gaussian_matrix(3, 4, 1.0);
    UpdateSet ub = UpdateSet::zeros_like(b);
    ub.layers[0] = gb.gaussian_matrix(3, 4, 1.0);
    adam_step(sa, ua, 1e-3, a);
    adam_step(sb, ub, 1e-3, b);
  }
  CHECK(a.weights[0] == b.weights[0]);
}

TEST_CASE("rule config validation") {
  RuleConfig rule;
  rule.kind = RuleKind::Bp;
  rule.double_noisy = true;
  CHECK_THROWS_AS(rule.validate(), InvalidParameter);
  rule.kind = RuleKind::Anp;
  CHECK_NOTHROW(rule.validate());
  rule.sigma2 = 0.0;
  CHECK_THROWS_AS(rule.validate(), InvalidParameter);
}
