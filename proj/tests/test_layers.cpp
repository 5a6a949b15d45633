#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dbpmae/layers.hpp"
#include "oracles.hpp"

using namespace dbp;

namespace {

// Block oracle: the same computation with explicit loops only.
Matrix naive_layernorm(const Matrix& x, const Vector& gamma, const Vector& beta, double eps) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (Index j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols());
    for (Index j = 0; j < x.cols(); ++j)
      out(i, j) = (x(i, j) - mean) / std::sqrt(var + eps) * gamma(j) + beta(j);
  }
  return out;
}

Matrix naive_gelu(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j)
      out(i, j) = 0.5 * x(i, j) * (1.0 + std::erf(x(i, j) / std::sqrt(2.0)));
  return out;
}

Matrix naive_block_forward(EncoderBlock& block, const Matrix& x, Index batch, Index tokens) {
  const int dim = static_cast<int>(x.cols());
  const int heads = block.heads;
  const int dh = dim / heads;
  Matrix a = naive_layernorm(x, block.norm1.gamma, block.norm1.beta, block.norm1.eps);
  Matrix qkv = oracle::naive_affine(a, block.qkv.weight, block.qkv.bias);
  Matrix ctx = Matrix::Zero(batch * tokens, dim);
  for (Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      for (Index ti = 0; ti < tokens; ++ti) {
        // scores for query ti against all keys
        std::vector<double> scores(static_cast<size_t>(tokens));
        double mx = -1e300;
        for (Index tj = 0; tj < tokens; ++tj) {
          double s = 0.0;
          for (int k = 0; k < dh; ++k)
            s += qkv(b * tokens + ti, h * dh + k) * qkv(b * tokens + tj, dim + h * dh + k);
          scores[static_cast<size_t>(tj)] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, scores[static_cast<size_t>(tj)]);
        }
        double denom = 0.0;
        for (auto& s : scores) {
          s = std::exp(s - mx);
          denom += s;
        }
        for (Index tj = 0; tj < tokens; ++tj)
          for (int k = 0; k < dh; ++k)
            ctx(b * tokens + ti, h * dh + k) += scores[static_cast<size_t>(tj)] / denom *
                                                qkv(b * tokens + tj, 2 * dim + h * dh + k);
      }
    }
  }
  Matrix x1 = x + oracle::naive_affine(ctx, block.out_proj.weight, block.out_proj.bias);
  Matrix a2 = naive_layernorm(x1, block.norm2.gamma, block.norm2.beta, block.norm2.eps);
  Matrix m = oracle::naive_affine(naive_gelu(oracle::naive_affine(a2, block.fc1.weight, block.fc1.bias)),
                                  block.fc2.weight, block.fc2.bias);
  return x1 + m;
}

}  // namespace

TEST_CASE("linear_forward: identity chain") {
  Rng rng(1);
  DecorrelatedLinear layer(2, 2, rng);
  layer.weight = Matrix::Identity(2, 2);
  layer.bias.setZero();
  layer.decorr = DecorrelationMatrix(2, "s");
  Matrix x(1, 2);
  x << 1, 2;
  Matrix out = layer.forward(x);
  CHECK(out(0, 0) == 1.0);
  CHECK(out(0, 1) == 2.0);
}

TEST_CASE("linear_forward: dot product plus bias") {
  Rng rng(2);
  DecorrelatedLinear layer(2, 1, rng);
  layer.weight << 1, 1;
  layer.bias << 0.5;
  layer.decorr = DecorrelationMatrix(2, "s");
  Matrix x(1, 2);
  x << 2, 3;
  CHECK(layer.forward(x)(0, 0) == doctest::Approx(5.5).epsilon(1e-15));
}

TEST_CASE("linear_forward: matches the naive loop oracle") {
  Rng rng(3);
  DecorrelatedLinear layer(8, 4, rng);
  layer.decorr = DecorrelationMatrix(8, "s");
  layer.decorr->values = Matrix::Identity(8, 8) + 0.1 * oracle::random_matrix(8, 8, rng);
  Matrix x = oracle::random_matrix(16, 8, rng);
  Matrix out = layer.forward(x);
  Matrix z = oracle::naive_matmul(x, layer.decorr->values.transpose());
  Matrix want = oracle::naive_affine(z, layer.weight, layer.bias);
  CHECK(oracle::max_abs_diff(out, want) < 1e-10);
}

TEST_CASE("linear_backward: zero upstream gradient gives zero gradients") {
  Rng rng(4);
  DecorrelatedLinear layer(5, 3, rng);
  Matrix x = oracle::random_matrix(7, 5, rng);
  layer.forward(x);
  Matrix gx = layer.backward(Matrix::Zero(7, 3));
  CHECK(gx.cwiseAbs().maxCoeff() == 0.0);
  CHECK(layer.grad_weight.cwiseAbs().maxCoeff() == 0.0);
  CHECK(layer.grad_bias.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linear_backward: identity R reduces to the plain dense gradients") {
  Rng rng(5);
  DecorrelatedLinear with_r(6, 4, rng);
  DecorrelatedLinear plain = with_r;
  with_r.decorr = DecorrelationMatrix(6, "s");
  Matrix x = oracle::random_matrix(9, 6, rng);
  Matrix g = oracle::random_matrix(9, 4, rng);
  with_r.forward(x);
  plain.forward(x);
  Matrix gx_r = with_r.backward(g);
  Matrix gx_p = plain.backward(g);
  CHECK(oracle::bits_equal(gx_r, gx_p));
  CHECK(oracle::bits_equal(with_r.grad_weight, plain.grad_weight));
  CHECK((with_r.grad_bias.array() == plain.grad_bias.array()).all());
}

TEST_CASE("linear_backward: matches central finite differences") {
  Rng rng(6);
  DecorrelatedLinear layer(5, 4, rng);
  layer.decorr = DecorrelationMatrix(5, "s");
  layer.decorr->values = Matrix::Identity(5, 5) + 0.2 * oracle::random_matrix(5, 5, rng);
  Matrix x = oracle::random_matrix(6, 5, rng);
  Matrix m = oracle::random_matrix(6, 4, rng);  // weights of the scalar probe loss

  auto loss = [&]() { return layer.forward(x).cwiseProduct(m).sum(); };
  loss();
  Matrix gx = layer.backward(m);
  Matrix gw = layer.grad_weight;
  Vector gb = layer.grad_bias;

  for (Index i = 0; i < layer.weight.size(); ++i)
    CHECK(oracle::close(gw.data()[i], oracle::central_diff(layer.weight.data() + i, loss), 1e-4));
  for (Index i = 0; i < layer.bias.size(); ++i)
    CHECK(oracle::close(gb(i), oracle::central_diff(layer.bias.data() + i, loss), 1e-4));
  for (Index i = 0; i < x.size(); ++i)
    CHECK(oracle::close(gx.data()[i], oracle::central_diff(x.data() + i, loss), 1e-4));
}

TEST_CASE("linear_backward before forward is a state error") {
  Rng rng(7);
  DecorrelatedLinear layer(3, 2, rng);
  CHECK_THROWS_AS(layer.backward(Matrix::Zero(1, 2)), StateError);
}

TEST_CASE("layernorm: constant rows map to the shift parameter") {
  LayerNorm ln(4);
  Rng rng(8);
  for (Index i = 0; i < 4; ++i) {
    ln.gamma(i) = rng.normal();
    ln.beta(i) = rng.normal();
  }
  Matrix x = Matrix::Constant(2, 4, 3.7);
  Matrix out = ln.forward(x);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 4; ++j) CHECK(out(i, j) == doctest::Approx(ln.beta(j)).epsilon(1e-12));
}

TEST_CASE("layernorm backward matches finite differences") {
  LayerNorm ln(6);
  Rng rng(9);
  for (Index i = 0; i < 6; ++i) {
    ln.gamma(i) = 1.0 + 0.3 * rng.normal();
    ln.beta(i) = 0.2 * rng.normal();
  }
  Matrix x = oracle::random_matrix(5, 6, rng);
  Matrix m = oracle::random_matrix(5, 6, rng);
  auto loss = [&]() { return ln.forward(x).cwiseProduct(m).sum(); };
  loss();
  Matrix gx = ln.backward(m);
  Vector gg = ln.grad_gamma, gb = ln.grad_beta;
  for (Index i = 0; i < x.size(); ++i)
    CHECK(oracle::close(gx.data()[i], oracle::central_diff(x.data() + i, loss), 1e-4));
  for (Index i = 0; i < 6; ++i) {
    CHECK(oracle::close(gg(i), oracle::central_diff(ln.gamma.data() + i, loss), 1e-4));
    CHECK(oracle::close(gb(i), oracle::central_diff(ln.beta.data() + i, loss), 1e-4));
  }
}

TEST_CASE("gelu: odd-symmetric point and finite differences") {
  Matrix zero = Matrix::Zero(1, 1);
  CHECK(gelu_forward(zero)(0, 0) == 0.0);

  Rng rng(10);
  Matrix x = oracle::random_matrix(4, 5, rng);
  Matrix m = oracle::random_matrix(4, 5, rng);
  auto loss = [&]() { return gelu_forward(x).cwiseProduct(m).sum(); };
  Matrix gx = gelu_backward(x, m);
  for (Index i = 0; i < x.size(); ++i)
    CHECK(oracle::close(gx.data()[i], oracle::central_diff(x.data() + i, loss), 1e-4));
}

TEST_CASE("softmax: rows sum to one; backward matches finite differences") {
  Rng rng(11);
  Matrix x = oracle::random_matrix(6, 7, rng, 2.0);
  Matrix y = softmax_forward(x);
  for (Index i = 0; i < y.rows(); ++i)
    CHECK(y.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));

  Matrix m = oracle::random_matrix(6, 7, rng);
  auto loss = [&]() { return softmax_forward(x).cwiseProduct(m).sum(); };
  Matrix gx = softmax_backward(y, m);
  for (Index i = 0; i < x.size(); ++i)
    CHECK(oracle::close(gx.data()[i], oracle::central_diff(x.data() + i, loss), 1e-4));
}

TEST_CASE("attention: a single token attends only to itself") {
  Rng rng(12);
  EncoderBlock block(8, 2, 4, rng);
  Matrix x = oracle::random_matrix(3, 8, rng);  // batch 3, T = 1
  block.forward(x, 3, 1);
  const Matrix& w = block.last_attention_weights();
  REQUIRE(w.rows() == 6);
  REQUIRE(w.cols() == 1);
  for (Index i = 0; i < w.rows(); ++i) CHECK(w(i, 0) == 1.0);
}

TEST_CASE("attention: identical tokens weight uniformly") {
  Rng rng(13);
  EncoderBlock block(8, 2, 4, rng);
  const Index T = 5;
  Matrix x(T, 8);
  Matrix row = oracle::random_matrix(1, 8, rng);
  for (Index i = 0; i < T; ++i) x.row(i) = row;
  block.forward(x, 1, T);
  const Matrix& w = block.last_attention_weights();
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j) CHECK(w(i, j) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("attention: full block matches the per-head loop oracle") {
  Rng rng(14);
  EncoderBlock block(16, 4, 4, rng);
  Matrix x = oracle::random_matrix(2 * 5, 16, rng);
  Matrix got = block.forward(x, 2, 5);
  Matrix want = naive_block_forward(block, x, 2, 5);
  CHECK(oracle::max_abs_diff(got, want) < 1e-8);
}

TEST_CASE("attention: head-divisibility is a config error") {
  Rng rng(15);
  CHECK_THROWS_AS(EncoderBlock(10, 3, 4, rng), ConfigError);
}

TEST_CASE("block backward matches finite differences, including through R") {
  Rng rng(16);
  EncoderBlock block(8, 2, 2, rng);
  block.qkv.decorr = DecorrelationMatrix(8, "qkv");
  block.qkv.decorr->values += 0.1 * oracle::random_matrix(8, 8, rng);
  block.fc1.decorr = DecorrelationMatrix(8, "fc1");
  Matrix x = oracle::random_matrix(2 * 3, 8, rng);
  Matrix m = oracle::random_matrix(2 * 3, 8, rng);
  auto loss = [&]() { return block.forward(x, 2, 3).cwiseProduct(m).sum(); };
  loss();
  Matrix gx = block.backward(m);

  for (Index i = 0; i < x.size(); ++i)
    CHECK(oracle::close(gx.data()[i], oracle::central_diff(x.data() + i, loss), 1e-4));
  Matrix gw_qkv = block.qkv.grad_weight;
  loss();
  block.backward(m);
  for (Index i = 0; i < 40; ++i) {
    Index k = static_cast<Index>(rng.uniform_int(static_cast<uint64_t>(block.qkv.weight.size())));
    CHECK(oracle::close(gw_qkv.data()[k],
                        oracle::central_diff(block.qkv.weight.data() + k, loss), 1e-4));
  }
  Vector gg = block.norm1.grad_gamma;
  for (Index i = 0; i < 8; ++i)
    CHECK(oracle::close(gg(i), oracle::central_diff(block.norm1.gamma.data() + i, loss), 1e-4));
}

TEST_CASE("R-constancy: the DBP update never leaks into the step's gradients") {
  Rng rng(17);
  DecorrelatedLinear a(6, 4, rng);
  a.decorr = DecorrelationMatrix(6, "s");
  a.decorr->values += 0.05 * oracle::random_matrix(6, 6, rng);
  DecorrelatedLinear b = a;

  Matrix x = oracle::random_matrix(10, 6, rng);
  Matrix g = oracle::random_matrix(10, 4, rng);

  a.forward(x);
  a.backward(g);

  b.forward(x);
  b.backward(g);
  auto est = off_diagonal_covariance(b.cached_input());
  update_decorrelation(*b.decorr, est, 1e-3);  // after backward, like the trainer

  CHECK(oracle::bits_equal(a.grad_weight, b.grad_weight));
  CHECK((a.grad_bias.array() == b.grad_bias.array()).all());
}

TEST_CASE("fusion transparency: a fused block reproduces the unfused outputs") {
  Rng rng(18);
  EncoderBlock block(8, 2, 4, rng);
  for (DecorrelatedLinear* l : block.decorr_site_layers(true)) {
    l->decorr = DecorrelationMatrix(l->in_dim(), "s");
    l->decorr->values += 0.05 * oracle::random_matrix(l->in_dim(), l->in_dim(), rng);
  }
  EncoderBlock fused = block;
  fused.fuse();
  CHECK_FALSE(fused.qkv.decorr.has_value());

  Matrix x = oracle::random_matrix(4 * 6, 8, rng);
  Matrix a = block.forward(x, 4, 6);
  Matrix b = fused.forward(x, 4, 6);
  CHECK(oracle::max_rel_diff(a, b) < 1e-5);
}

TEST_CASE("default decorrelation sites per block are QKV and MLP first linear") {
  Rng rng(19);
  EncoderBlock block(8, 2, 4, rng);
  CHECK(block.decorr_site_layers(false).size() == 2);
  CHECK(block.decorr_site_layers(true).size() == 4);
}
