#include "ditsr/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

#include "ditsr/blocks.hpp"

namespace ditsr {

namespace {

Tensor random_tensor(const Shape& shape, CounterRng& rng, double sd = 1.0, double offset = 0.0) {
  auto v = rng.normal_vector(numel_of(shape));
  for (auto& x : v) x = offset + sd * x;
  return Tensor(shape, std::move(v), true);
}

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t limit, CounterRng& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (limit == 0 || limit >= n) return all;
  for (std::size_t i = 0; i < limit; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
    std::swap(all[i], all[j]);
  }
  all.resize(limit);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradcheckResult gradcheck(const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                          CounterRng& rng, const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<Tensor> handles = leaves;
  for (auto& leaf : handles) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }

  Tensor weights;
  {
    NoGradGuard no_grad;
    const Tensor probe = f();
    weights = Tensor(probe.shape(), rng.normal_vector(probe.numel()));
  }
  const auto w = weights.data();
  auto objective = [&] {
    NoGradGuard no_grad;
    const Tensor out = f();
    const auto d = out.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) acc += d[i] * w[i];
    return acc;
  };

  backward(sum(mul(f(), weights)));

  std::vector<double> analytic, numeric;
  for (auto& leaf : handles) {
    const auto coords = pick_coords(leaf.numel(), options.max_coords, rng);
    const auto g = leaf.grad();
    const auto fd = finite_diff_grad_inplace(objective, leaf, options.eps, coords);
    for (std::size_t i : coords) {
      analytic.push_back(g[i]);
      numeric.push_back(fd[i]);
    }
    leaf.zero_grad();
  }

  GradcheckResult r;
  r.name = name;
  r.rel_error = relative_error(analytic, numeric);
  r.probed = analytic.size();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void perturb_params(ParamStore& store, CounterRng& rng, double sd) {
  for (const auto& [name, t] : store.named()) {
    Tensor handle = t;
    for (auto& v : handle.mutable_data()) v += sd * rng.normal();
  }
}

std::vector<GradcheckResult> gradcheck_suite(const DenoiserConfig& net, std::uint64_t seed,
                                             std::size_t net_max_coords) {
  CounterRng rng(seed);
  std::vector<GradcheckResult> results;
  auto run = [&](const std::string& name, double tol, const std::function<Tensor()>& f,
                 const std::vector<Tensor>& leaves, std::size_t max_coords = 0) {
    CounterRng local = rng.fork(results.size());
    GradcheckOptions opts;
    opts.max_coords = max_coords;
    GradcheckResult r = gradcheck(name, f, leaves, local, opts);
    r.tolerance = tol;
    results.push_back(r);
  };
  const double tol = kBlockGradTolerance;

  {
    Tensor a = random_tensor({3, 4, 5}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({5}, rng);
    run("elementwise", tol,
        [=] { return add(gelu(mul(a, b)), scale(square(sub(a, c)), 0.3)) + add(a, 0.5); }, {a, b, c});
  }
  {
    Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 5}, rng), m = random_tensor({4, 6}, rng);
    run("matmul", tol, [=] { return concat({matmul(a, b), matmul(a, m)}, 2); }, {a, b, m});
  }
  {
    Tensor x = random_tensor({4, 3, 5}, rng), w = random_tensor({6, 4}, rng), bias = random_tensor({6}, rng);
    run("linear_channels", tol, [=] { return linear_channels(x, w, bias); }, {x, w, bias});
  }
  {
    Tensor x = random_tensor({8, 4, 4}, rng, 2.0, 0.5);
    Tensor gamma = random_tensor({8}, rng, 0.3, 1.0), beta = random_tensor({8}, rng);
    run("group_norm", tol, [=] { return group_norm(x, 4, gamma, beta, 1e-6); }, {x, gamma, beta});
  }
  {
    Tensor x = random_tensor({3, 4, 5}, rng, 2.0);
    run("softmax", tol, [=] { return concat({softmax(x, 2), softmax(x, 1)}, 0); }, {x});
  }
  {
    Tensor x = random_tensor({4, 4, 6}, rng);
    run("reshape_ops", tol,
        [=] {
          const Tensor p = permute(x, {2, 0, 1}).reshape({6, 16});
          return concat({slice(p, 1, 3, 8), slice(p, 1, 0, 8)}, 0);
        },
        {x});
  }
  {
    Tensor x = random_tensor({3, 8, 8}, rng);
    run("space_to_depth", tol, [=] { return depth_to_space(scale(space_to_depth(x), 2.0)) + space_to_depth(x).reshape({3, 8, 8}); },
        {x});
  }

  // Block components at C=8, 8x8, p=4, w=4.
  const std::size_t c = 8, hw = 8, p = 4, win = 4;
  {
    Tensor x = random_tensor({c, hw, hw}, rng), f = random_tensor({3 * c}, rng, 0.5);
    run("adaln_modulate", tol,
        [=] {
          const auto [h, gate] = adaln_modulate(x, f);
          return channel_scale(h, gate);
        },
        {x, f});
  }
  {
    Tensor x = random_tensor({c, hw, hw}, rng), f = random_tensor({p, p}, rng, 0.5, 1.0);
    run("adafm_modulate", tol, [=] { return adafm_modulate(x, adafm_symmetrize(f), p); }, {x, f});
  }
  {
    const std::size_t d_t = 16;
    TimeMlpWeights wts{random_tensor({d_t, d_t}, rng, 0.25), random_tensor({d_t}, rng, 0.1),
                       random_tensor({d_t, 2 * p * p}, rng, 0.25), random_tensor({2 * p * p}, rng, 0.1)};
    const Tensor embed = sinusoidal_embed(9, d_t);
    run("time_mlp", tol,
        [=] {
          const auto [f1, f2] = time_mlp(embed, wts, CondMode::adafm, c, p);
          return concat({f1, f2}, 0);
        },
        {wts.w1, wts.b1, wts.w2, wts.b2});
  }
  {
    const double sd = 1.0 / std::sqrt(static_cast<double>(c));
    AttentionWeights wts{random_tensor({c, c}, rng, sd), random_tensor({c}, rng, 0.1),
                         random_tensor({c, c}, rng, sd), random_tensor({c}, rng, 0.1),
                         random_tensor({c, c}, rng, sd), random_tensor({c}, rng, 0.1),
                         random_tensor({c, c}, rng, sd), random_tensor({c}, rng, 0.1),
                         random_tensor({2, (2 * win - 1) * (2 * win - 1)}, rng, 0.3)};
    Tensor x = random_tensor({c, hw, hw}, rng);
    const AttentionWindowSpec spec{win, win / 2, 2, c / 2};
    run("windowed_mhsa", tol, [=] { return windowed_mhsa(x, spec, wts); },
        {x, wts.wq, wts.bq, wts.wk, wts.bk, wts.wv, wts.bv, wts.wo, wts.bo, *wts.rel_bias});
  }
  for (const CondMode mode : {CondMode::adaln, CondMode::adafm}) {
    BlockSpec spec;
    spec.width = c;
    spec.heads = 2;
    spec.window = win;
    spec.shift = win / 2;
    spec.fft_window = p;
    spec.d_t = 16;
    spec.mode = mode;
    auto store = std::make_shared<ParamStore>();
    for (const auto& ps : block_param_specs(spec)) store->add(ps, rng);
    perturb_params(*store, rng, 0.1);
    auto block = std::make_shared<TransformerBlock>(spec, *store, "");
    Tensor x = random_tensor({c, hw, hw}, rng);
    const Tensor embed = sinusoidal_embed(5, spec.d_t);
    std::vector<Tensor> leaves{x};
    for (const auto& [name, t] : store->named()) leaves.push_back(t);
    run(std::string("block_") + to_string(mode), tol, [=] { return block->forward(x, embed); }, leaves);
  }

  {
    auto model = std::make_shared<Denoiser>(net, seed);
    perturb_params(model->params(), rng, 0.05);
    const std::size_t size = 2 * net.resolution_multiple();
    const Shape img{net.image_channels, size, size};
    Tensor x_t = random_tensor(img, rng, 0.3, 0.5), y0 = random_tensor(img, rng, 0.3, 0.5);
    std::vector<Tensor> leaves{x_t, y0};
    for (const auto& [name, t] : model->params().named()) leaves.push_back(t);
    run("denoiser_" + net.name, kNetworkGradTolerance, [=] { return model->forward(x_t, y0, 7); }, leaves,
        net_max_coords);
  }
  return results;
}

}  // namespace ditsr
