#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "resexp/error.hpp"
#include "resexp/netmodel/network.hpp"
#include "resexp/netmodel/serialize.hpp"

using namespace resexp;
using nd::Tensor;
using net::NetworkSpec;

namespace {

NetworkSpec small_spec(std::size_t depth = 2, std::size_t width = 6) {
  NetworkSpec s;
  s.depth = depth;
  s.width = width;
  s.branch_width = 5;
  s.output_dim = 3;
  s.insertion_layer = depth / 2;
  return s;
}

Tensor random_inputs(std::size_t rows, std::size_t cols, double radius, std::mt19937_64& rng) {
  Tensor x = oracle::random_tensor({rows, cols}, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (double v : x.row(r)) n += v * v;
    n = std::sqrt(n);
    if (n > radius)
      for (double& v : x.row(r)) v *= radius / n;
  }
  return x;
}

}  // namespace

TEST(Norms, RmsNormFixedPoint) {
  const std::vector<double> g(4, 1.0);
  const Tensor y = net::rmsnorm_eps(Tensor::vector({1, 1, 1, 1}), g, 1e-300);
  for (double v : y.data()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Norms, RmsNormHandExample) {
  const std::vector<double> g{1, 1};
  const Tensor y = net::rmsnorm_eps(Tensor::vector({3, 4}), g, 1e-300);
  EXPECT_NEAR(y[0], 3.0 / std::sqrt(12.5), 1e-12);
  EXPECT_NEAR(y[0], 0.84853, 1e-5);
  EXPECT_NEAR(y[1], 1.13137, 1e-5);
  EXPECT_NEAR(y.norm(), std::sqrt(2.0), 1e-12);
}

TEST(Norms, OutputNormIsTruncated) {
  std::mt19937_64 rng(1);
  std::vector<double> g(16);
  for (std::size_t i = 0; i < 16; ++i) g[i] = i == 3 ? -2.0 : std::uniform_real_distribution<double>(-2, 2)(rng);
  for (int rep = 0; rep < 200; ++rep) {
    const Tensor x = oracle::random_tensor({16}, rng, std::pow(10.0, rep % 7 - 3));
    EXPECT_LE(net::rmsnorm_eps(x, g, 1e-2).norm(), 8.0 + 1e-9);
    EXPECT_LE(net::layernorm_eps(x, g, 1e-2).norm(), 8.0 + 1e-9);
  }
}

TEST(Norms, LipschitzConstants) {
  EXPECT_DOUBLE_EQ(net::stabilized_norm_lipschitz(1.0, 1e-4), 200.0);
  EXPECT_DOUBLE_EQ(net::stabilized_norm_lipschitz(2.0, 4.0), 2.0);
  const std::vector<double> gamma{1.0}, var{3.0};
  EXPECT_DOUBLE_EQ(net::batchnorm_lipschitz(gamma, var, 1.0), 0.5);
}

TEST(Norms, DifferenceQuotientsRespectTheBound) {
  std::mt19937_64 rng(2);
  const std::vector<double> g(8, 1.5);
  const double eps = 0.05, bound = net::stabilized_norm_lipschitz(1.5, eps);
  for (int rep = 0; rep < 500; ++rep) {
    const double s = std::pow(10.0, rep % 5 - 3);
    const Tensor a = oracle::random_tensor({8}, rng, s), b = a + oracle::random_tensor({8}, rng, s * 0.1);
    const double dx = (a - b).norm();
    EXPECT_LE((net::rmsnorm_eps(a, g, eps) - net::rmsnorm_eps(b, g, eps)).norm() / dx, bound);
    EXPECT_LE((net::layernorm_eps(a, g, eps) - net::layernorm_eps(b, g, eps)).norm() / dx, bound);
  }
}

TEST(Forward, EmptyBottomAndIdentityHead) {
  NetworkSpec s = small_spec(0, 3);
  s.output_dim = 3;
  s.insertion_layer = 0;
  net::NetworkState st = net::init_state(s, 1);
  st.head = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const Tensor x = Tensor::matrix({{0.5, -1, 2}});
  const auto d = net::forward_decomposed(s, st, x);
  EXPECT_EQ(d.z, x);
  EXPECT_EQ(d.output, x);
}

TEST(Forward, ZeroBranchOnUnitRmsInputIsIdentity) {
  NetworkSpec s = small_spec(1, 4);
  s.insertion_layer = 1;
  s.eps_eng = 1e-300;
  net::NetworkState st = net::init_state(s, 1);
  st.layers[0].w2 = Tensor({4, 5});
  const Tensor x = Tensor::matrix({{1, -1, 1, 1}});
  const auto d = net::forward_decomposed(s, st, x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(d.z[i], x[i], 1e-12);
}

TEST(Forward, RepresentationNormIsBounded) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    NetworkSpec s = small_spec(1 + rep % 3, 8);
    s.gamma = std::vector<double>(8, 0.5 + 0.1 * rep);
    s.insertion_layer = s.depth;
    const auto st = net::init_state(s, rep);
    const auto d = net::forward_decomposed(s, st, random_inputs(32, 8, s.input_bound, rng));
    for (std::size_t r = 0; r < 32; ++r) {
      double n = 0.0;
      for (double v : d.z.row(r)) n += v * v;
      EXPECT_LE(std::sqrt(n), s.gamma_max() * std::sqrt(8.0) + 1e-9);
    }
  }
}

TEST(Forward, InputBoundIsEnforced) {
  NetworkSpec s = small_spec(1, 2);
  const auto st = net::init_state(s, 0);
  try {
    net::forward_decomposed(s, st, Tensor::matrix({{100, 0}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InputTooLarge);
  }
}

TEST(Projection, FrobeniusCapScalesRadially) {
  const Tensor w = Tensor::matrix({{2, 0}, {0, 0}});
  EXPECT_EQ(net::project_matrix(w, 10.0, 1.0), Tensor::matrix({{1, 0}, {0, 0}}));
}

TEST(Projection, FeasibleIsUnchanged) {
  const Tensor w = Tensor::matrix({{0.3, 0.1}, {-0.2, 0.4}});
  EXPECT_EQ(net::project_matrix(w, 1.0, 1.0), w);
}

TEST(Projection, SpectralCapBinds) {
  const Tensor p = net::project_matrix(Tensor::matrix({{3, 0}, {0, 0.1}}), 1.0, 10.0);
  EXPECT_NEAR(p(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(p(1, 1), 0.1 / 3.0, 1e-12);
  EXPECT_NEAR(net::spectral_norm(p), 1.0, 1e-12);
}

TEST(Projection, InitIsFeasible) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    NetworkSpec s = small_spec(3, 12);
    s.sigma_cap = 0.5;
    s.frob_cap = 1.0;
    EXPECT_TRUE(net::norm_feasible(net::init_state(s, seed), s));
  }
}

TEST(Constants, SensitivitiesEmptyProduct) {
  const std::vector<net::LayerConstants> layers{{1.0, 0.0, 1.0, 1.0, 1}};
  EXPECT_EQ(net::layer_sensitivities(layers, 1.0, 1.0), std::vector<double>{1.0});
}

TEST(Constants, SensitivitiesTwoLayers) {
  const std::vector<net::LayerConstants> layers{{2.0, 1.0, 1.0, 1.0, 1}, {2.0, 1.0, 1.0, 1.0, 1}};
  const auto lambda = net::layer_sensitivities(layers, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(lambda[0], 8.0);
  EXPECT_DOUBLE_EQ(lambda[1], 2.0);
}

TEST(Constants, LambdaMaxMonotoneInNormConstants) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<net::LayerConstants> layers(4);
    for (auto& l : layers) l = {u(rng), u(rng), u(rng), 1.0, 1};
    const auto base = net::layer_sensitivities(layers, 1.0, 1.0);
    layers[rep % 4].c *= 1.5;
    const auto bumped = net::layer_sensitivities(layers, 1.0, 1.0);
    EXPECT_GE(*std::max_element(bumped.begin(), bumped.end()), *std::max_element(base.begin(), base.end()));
  }
}

TEST(Constants, ExpandedClassCountsTheBlock) {
  NetworkSpec s = small_spec(2, 6);
  const auto st = net::init_state(s, 0);
  const auto block = net::make_block(s, net::FeatureKind::ReluRandom, 4, 1);
  const auto k0 = net::compute_arch_constants(s, st);
  const auto k1 = net::compute_arch_constants(s, st, &block);
  EXPECT_EQ(k0.num_layers(), 2u);
  EXPECT_EQ(k1.num_layers(), 3u);
  EXPECT_EQ(k1.d, k0.d + 6 * 4);
  EXPECT_GE(k1.lambda_max, k0.lambda_max);
  EXPECT_GE(k1.B_ell, k0.B_ell);
}

TEST(Expansion, ZeroOutputBlockIsExact) {
  std::mt19937_64 rng(5);
  for (auto kind : {net::FeatureKind::ReluRandom, net::FeatureKind::Constant}) {
    for (std::size_t l = 0; l <= 2; ++l) {
      NetworkSpec s = small_spec(2, 6);
      s.insertion_layer = l;
      const auto st = net::init_state(s, l);
      const auto block = net::make_block(s, kind, 7, 9);
      const Tensor x = random_inputs(50, 6, s.input_bound, rng);
      EXPECT_EQ(net::forward_decomposed(s, st, x).output, net::forward_decomposed(s, st, x, &block).output);
    }
  }
}

TEST(Gradients, ActivationGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  NetworkSpec s = small_spec(2, 5);
  s.insertion_layer = 1;
  const auto st = net::init_state(s, 3);
  net::Dataset data;
  data.x = random_inputs(3, 5, s.input_bound, rng);
  data.labels = {0, 2, 1};
  const auto ag = net::activation_gradients(s, st, data);
  // Finite differences of the per-sample loss through the top map.
  NetworkSpec top = s;
  top.depth = 1;
  top.insertion_layer = 0;
  net::NetworkState top_state;
  top_state.layers = {st.layers[1]};
  top_state.head = st.head;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t j = 0; j < 5; ++j) {
      auto loss_at = [&](double h) {
        net::Dataset one;
        one.x = nd::slice_rows(ag.z, r, r + 1);
        one.x(0, j) += h;
        one.labels = {data.labels[r]};
        return net::mean_loss(top, top_state, nullptr, one);
      };
      const double fd = (loss_at(1e-6) - loss_at(-1e-6)) / 2e-6;
      EXPECT_NEAR(ag.q(r, j), fd, 1e-7 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Serialize, RoundTripIsBitExact) {
  NetworkSpec s = small_spec(3, 7);
  s.norm_kind = net::NormKind::FixedBatchNorm;
  s.gamma = {1, 0.5, 2, 1, 1, 0.25, 1.5};
  std::mt19937_64 rng(7);
  auto st = net::init_state(s, 11);
  net::freeze_norm_statistics(s, st, random_inputs(40, 7, s.input_bound, rng));
  auto block = net::make_block(s, net::FeatureKind::ReluRandom, 3, 2);
  block.v = oracle::random_tensor({7, 3}, rng, 1e-3);
  const std::string text = net::model_to_text({s, st, block});
  const auto back = net::model_from_text(text, "mem");
  EXPECT_TRUE(back.state == st);
  ASSERT_TRUE(back.block.has_value());
  EXPECT_EQ(back.block->v, block.v);
  EXPECT_EQ(back.block->u, block.u);
  EXPECT_EQ(net::model_to_text(back), text);
}

TEST(Serialize, RejectsMalformedDocuments) {
  auto code = [](const std::string& text) {
    try {
      net::model_from_text(text, "doc");
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidState;
  };
  EXPECT_EQ(code("{"), ErrorCode::ConfigError);
  EXPECT_EQ(code(R"({"format": "other", "version": 1})"), ErrorCode::ConfigError);
  EXPECT_EQ(code(R"({"format": "resexp.model", "version": 1, "spec": {"widht": 3}})"), ErrorCode::ConfigError);
}
