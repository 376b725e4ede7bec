#pragma once

// Criteria that need no external data: gradient correctness, constraint
// invariants, reduction laws, loss values and rerun determinism.

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ila/attacks.hpp"
#include "ila/engine.hpp"
#include "ila/harness.hpp"
#include "ila/intermediate.hpp"
#include "report.hpp"

namespace acceptance {

namespace fs = std::filesystem;
using ila::engine::Tape;
using ila::engine::Tensor;
using ila::engine::Var;
using ila::models::Arch;
using ila::models::Model;

// Tolerances pinned by the criteria.
inline constexpr double kGradTol32 = 1e-3;
inline constexpr double kGradTol64 = 1e-6;
inline constexpr double kGradBudgetSeconds = 120;
inline constexpr std::size_t kGradCoords = 100;
inline constexpr double kBallSlack = 1e-6;
inline constexpr std::size_t kMinConstraintImages = 10000;
inline constexpr double kLossTol = 1e-6;

inline Tensor<double> uniform(ila::engine::Shape shape, std::uint64_t seed, double lo = -1,
                              double hi = 1) {
  Tensor<double> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

template <class V>
struct elem;
template <class T>
struct elem<Var<T>> {
  using type = T;
};
template <class V>
using elem_t = typename elem<std::decay_t<V>>::type;

// -- criterion 1 ----------------------------------------------------------------

struct GradCase {
  std::string name;
  Tensor<double> point;
  // Instantiated at float, double and long double.
  std::function<Var<float>(Tape<float>&, Var<float>)> f32;
  std::function<Var<double>(Tape<double>&, Var<double>)> f64;
  std::function<Var<long double>(Tape<long double>&, Var<long double>)> f80;
};

template <class G>
GradCase grad_case(std::string name, Tensor<double> point, G g) {
  return {std::move(name), std::move(point), g, g, g};
}

/// Random linear read-out so no symmetry of a plain sum can hide an error.
template <class T>
Var<T> probe(Var<T> y, std::uint64_t seed) {
  return dot(y, y.tape().constant(uniform(y.shape(), seed).template cast<T>()));
}

template <class T>
Var<T> constant(Tape<T>& t, const Tensor<double>& v) {
  return t.constant(v.template cast<T>());
}

inline std::vector<GradCase> primitive_cases() {
  using namespace ila::engine;
  std::vector<GradCase> cases;
  cases.push_back(grad_case("relu", uniform({3, 4, 10}, 1), [](auto&, auto x) {
    return probe(relu(x), 101);
  }));
  cases.push_back(grad_case("maxpool2x2", uniform({2, 2, 6, 6}, 2), [](auto&, auto x) {
    return probe(maxpool2x2(x), 102);
  }));
  cases.push_back(grad_case("avgpool_global+flatten", uniform({2, 3, 5, 5}, 3),
                            [](auto&, auto x) { return probe(flatten(avgpool_global(x)), 103); }));
  const auto other = uniform({10, 12}, 4);
  cases.push_back(grad_case("residual_add", uniform({10, 12}, 5), [other](auto& t, auto x) {
    return probe(residual_add(x, constant(t, other)), 104);
  }));
  cases.push_back(grad_case("mul", uniform({10, 12}, 6), [other](auto& t, auto x) {
    return probe(mul(x, constant(t, other)), 105);
  }));
  cases.push_back(grad_case("scale+sub_constant+sum", uniform({10, 12}, 7), [other](auto&, auto x) {
    using T = elem_t<decltype(x)>;
    return sum(mul(sub_constant(scale(x, T(1.7)), other.template cast<T>()), x));
  }));
  const auto w_in = uniform({8, 30}, 8), b_in = uniform({8}, 9);
  cases.push_back(grad_case("dense d/dx", uniform({4, 30}, 10), [=](auto& t, auto x) {
    return probe(dense(x, constant(t, w_in), std::optional(constant(t, b_in))), 106);
  }));
  const auto x_dense = uniform({4, 30}, 11);
  cases.push_back(grad_case("dense d/dW", w_in, [=](auto& t, auto w) {
    return probe(dense(constant(t, x_dense), w, std::optional(constant(t, b_in))), 107);
  }));
  const auto w_wide = uniform({128, 4}, 12), x_narrow = uniform({3, 4}, 13);
  cases.push_back(grad_case("dense d/db", uniform({128}, 14), [=](auto& t, auto b) {
    return probe(dense(constant(t, x_narrow), constant(t, w_wide), std::optional(b)), 108);
  }));
  const auto cw = uniform({4, 3, 3, 3}, 15), cb = uniform({4}, 16), cx = uniform({2, 3, 6, 6}, 17);
  for (std::size_t stride : {1u, 2u}) {
    const std::string s = " stride " + std::to_string(stride);
    cases.push_back(grad_case("conv2d d/dx" + s, cx, [=](auto& t, auto x) {
      return probe(conv2d(x, constant(t, cw), std::optional(constant(t, cb)), stride, 1), 109);
    }));
    cases.push_back(grad_case("conv2d d/dW" + s, cw, [=](auto& t, auto w) {
      return probe(conv2d(constant(t, cx), w, std::optional(constant(t, cb)), stride, 1), 110);
    }));
  }
  const auto w_many = uniform({104, 3, 1, 1}, 18), x_small = uniform({2, 3, 3, 3}, 19);
  cases.push_back(grad_case("conv2d d/db", uniform({104}, 20), [=](auto& t, auto b) {
    return probe(conv2d(constant(t, x_small), constant(t, w_many), std::optional(b), 1, 0), 111);
  }));
  for (bool training : {true, false}) {
    const std::string mode = training ? " (train)" : " (eval)";
    const auto gamma = uniform({3}, 21, 0.5, 1.5), beta = uniform({3}, 22);
    cases.push_back(grad_case("batchnorm2d d/dx" + mode, uniform({4, 3, 3, 3}, 23),
                              [=](auto& t, auto x) {
      using T = elem_t<decltype(x)>;
      Tensor<T> rm({3}, T(0.1)), rv({3}, T(0.9));
      BatchNormOptions o;
      o.training = training;
      return probe(batchnorm2d(x, constant(t, gamma), constant(t, beta), rm, rv, o), 112);
    }));
    const auto bx = uniform({2, 104, 2, 2}, 24), g104 = uniform({104}, 25, 0.5, 1.5),
               b104 = uniform({104}, 26);
    cases.push_back(grad_case("batchnorm2d d/dgamma" + mode, g104, [=](auto& t, auto g) {
      using T = elem_t<decltype(g)>;
      Tensor<T> rm({104}, T(0.1)), rv({104}, T(0.9));
      BatchNormOptions o;
      o.training = training;
      return probe(batchnorm2d(constant(t, bx), g, constant(t, b104), rm, rv, o), 113);
    }));
    cases.push_back(grad_case("batchnorm2d d/dbeta" + mode, b104, [=](auto& t, auto b) {
      using T = elem_t<decltype(b)>;
      Tensor<T> rm({104}, T(0.1)), rv({104}, T(0.9));
      BatchNormOptions o;
      o.training = training;
      return probe(batchnorm2d(constant(t, bx), constant(t, g104), b, rm, rv, o), 114);
    }));
  }
  cases.push_back(grad_case("normalize_channels", uniform({3, 3, 6, 6}, 27), [](auto&, auto x) {
    using T = elem_t<decltype(x)>;
    const std::vector<T> mean{T(0.4), T(0.5), T(0.6)}, sd{T(0.2), T(0.25), T(0.3)};
    return probe(normalize_channels<T>(x, mean, sd), 115);
  }));
  cases.push_back(grad_case("softmax_cross_entropy", uniform({12, 10}, 28, -3, 3),
                            [](auto&, auto z) {
    static const std::vector<int> y{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 3, 1};
    return softmax_cross_entropy(z, y);
  }));
  const auto ref = uniform({4, 30}, 29);
  cases.push_back(grad_case("ilap_loss", uniform({4, 30}, 30), [ref](auto&, auto c) {
    using T = elem_t<decltype(c)>;
    return ila::intermediate::ilap_loss(c, ref.template cast<T>());
  }));
  cases.push_back(grad_case("ilaf_loss", uniform({4, 30}, 31), [ref](auto&, auto c) {
    using T = elem_t<decltype(c)>;
    return ila::intermediate::ilaf_loss(c, ref.template cast<T>(), 1.5);
  }));
  return cases;
}

struct GradLine {
  std::string name;
  double err32 = 0, err64 = 0;
  std::size_t coords = 0;
};

inline GradLine check_case(const GradCase& c) {
  using ila::engine::finite_difference_check;
  using ila::engine::ScalarFn;
  GradLine line{c.name};
  const auto r64 = finite_difference_check<double, long double>(
      ScalarFn<double>(c.f64), ScalarFn<long double>(c.f80), c.point, kGradCoords, 1e-8, 7);
  const auto r32 = finite_difference_check<float, double>(
      ScalarFn<float>(c.f32), ScalarFn<double>(c.f64), c.point.template cast<float>(),
      kGradCoords, 1e-7, 7);
  line.err64 = r64.nan_seen ? NAN : r64.max_rel_error;
  line.err32 = r32.nan_seen ? NAN : r32.max_rel_error;
  line.coords = std::min(r64.coords.size(), r32.coords.size());
  return line;
}

inline Outcome criterion_gradients(bool verbose) {
  Stopwatch clock;
  std::vector<GradLine> lines;
  for (const auto& c : primitive_cases()) lines.push_back(check_case(c));

  // Full mini_resnet loss with respect to the input pixels.
  ila::models::ModelSpec spec;
  spec.arch = Arch::kMiniResnet;
  const auto base = ila::models::build_model<float>(spec, 41);
  const auto m32 = base;
  const auto m64 = base.cast<double>();
  const auto m80 = base.cast<long double>();
  static const std::vector<int> y{3};
  lines.push_back(check_case(grad_case("mini_resnet loss", uniform({1, 3, 32, 32}, 42, 0, 1),
                                       [&](auto& t, auto v) {
    using T = elem_t<decltype(v)>;
    const Model<T>* m;
    if constexpr (std::is_same_v<T, float>) m = &m32;
    else if constexpr (std::is_same_v<T, double>) m = &m64;
    else m = &m80;
    return ila::engine::softmax_cross_entropy(m->logits(t, v), y);
  })));
  const double secs = clock.seconds();

  double worst32 = 0, worst64 = 0;
  std::size_t min_coords = SIZE_MAX;
  bool ok = true;
  for (const auto& l : lines) {
    const bool pass = l.err32 < kGradTol32 && l.err64 < kGradTol64 && l.coords >= kGradCoords;
    ok = ok && pass;
    worst32 = std::max(worst32, std::isnan(l.err32) ? INFINITY : l.err32);
    worst64 = std::max(worst64, std::isnan(l.err64) ? INFINITY : l.err64);
    min_coords = std::min(min_coords, l.coords);
    if (verbose || !pass) {
      std::cout << "    " << (pass ? "ok   " : "FAIL ") << l.name << ": 32-bit " << l.err32
                << ", 64-bit " << l.err64 << ", " << l.coords << " coords\n";
    }
  }
  ok = ok && secs < kGradBudgetSeconds;
  return verdict(1, "gradient correctness", ok,
                 cat(lines.size(), " checks (", lines.size() - 1,
                     " primitive cases + mini_resnet), >= ", min_coords,
                     " coords each; worst rel err 32-bit ", worst32, " (< ", kGradTol32,
                     "), 64-bit ", worst64, " (< ", kGradTol64, "); ", secs, " s (< ",
                     kGradBudgetSeconds, " s)"));
}

// -- criterion 2 ----------------------------------------------------------------

/// Violating images, checked pixel by pixel against the ball and the range.
template <class T>
std::size_t oracle_violations(const Tensor<T>& adv, const Tensor<T>& x, double eps) {
  const std::size_t n = x.dim(0), d = x.numel() / n;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < d && ok; ++j) {
      const double a = adv[i * d + j], o = x[i * d + j];
      ok = std::abs(a - o) <= eps + kBallSlack && a >= 0.0 && a <= 1.0;
    }
    bad += !ok;
  }
  return bad;
}

inline Model<float> random_model(Arch a, std::uint64_t seed, float width = 0.25f) {
  ila::models::ModelSpec s;
  s.arch = a;
  s.width_multiplier = width;
  auto m = ila::models::build_model<float>(s, seed);
  m.freeze();
  return m;
}

inline Outcome criterion_constraints(const ila::Exec& exec) {
  using namespace ila::attacks;
  Stopwatch clock;
  ila::harness::DatasetSpec ds;
  ds.count = 640;
  ds.seed = 77;
  const auto data = ila::harness::load_dataset(ds);
  const auto& x = data.images;
  const std::span<const int> y(data.labels);
  const std::vector<std::pair<Arch, std::string>> archs{
      {Arch::kMiniCnn, "cnn"}, {Arch::kMiniResnet, "resnet"}, {Arch::kMiniVgg, "vgg"}};
  std::vector<Model<float>> zoo;
  for (std::size_t i = 0; i < archs.size(); ++i) zoo.push_back(random_model(archs[i].first, 50 + i));

  std::size_t images = 0, violations = 0, runs = 0;
  auto record = [&](const Tensor<float>& adv, double eps) {
    images += adv.dim(0);
    violations += oracle_violations(adv, x, eps);
    ++runs;
  };
  for (std::size_t i = 0; i < zoo.size(); ++i) {
    const auto& m = zoo[i];
    PerturbationBudget wide;
    wide.epsilon = 0.1;
    record(fgsm(m, x, y, wide, exec).adversarials, wide.epsilon);
    AttackConfig it;
    it.n_iters = 3;
    it.lr = 0.01;  // larger than eps / n, so projection is exercised
    record(ifgsm(m, x, y, it, exec).adversarials, it.budget.epsilon);
    AttackConfig mi = it;
    mi.budget.epsilon = 0.03;
    record(mifgsm(m, x, y, mi, exec).adversarials, mi.budget.epsilon);
    ila::intermediate::IlaConfig ic;
    ic.n_iters = 3;
    ic.lr = 0.01;
    ic.layer = 1;
    const auto seed = ifgsm(m, x, y, it, exec);
    record(ila::intermediate::ila_attack(m, x, seed.adversarials, y, ic, exec).batch.adversarials,
           ic.budget.epsilon);
    ic.loss = ila::intermediate::LossKind::kFlexible;
    ic.alpha = 2.0;
    ic.layer = 0;
    ic.budget.epsilon = 0.03;
    record(ila::intermediate::ila_attack(m, x, seed.adversarials, y, ic, exec).batch.adversarials,
           ic.budget.epsilon);
  }
  AttackConfig mf;
  mf.n_iters = 3;
  mf.lr = 0.01;
  const auto ens = EnsembleConfig<float>::uniform({&zoo[0], &zoo[1], &zoo[2]});
  record(ensemble_multifool(ens, x, y, mf, exec).adversarials, mf.budget.epsilon);

  const bool ok = violations == 0 && images >= kMinConstraintImages;
  return verdict(2, "constraint invariants", ok,
                 cat(violations, " violating images out of ", images, " over ", runs,
                     " runs (fgsm, ifgsm, mifgsm, multifool, ilap, ilaf; need 0 and >= ",
                     kMinConstraintImages, " images); ", clock.seconds(), " s"));
}

// -- criterion 3 ----------------------------------------------------------------

template <class T>
std::vector<std::string> reduction_failures(const Model<T>& m, const Tensor<T>& x,
                                            std::span<const int> y, const std::string& tag) {
  using namespace ila::attacks;
  std::vector<std::string> failed;
  AttackConfig one;
  one.n_iters = 1;
  one.lr = one.budget.epsilon;
  if (ifgsm(m, x, y, one).adversarials != fgsm(m, x, y, one.budget).adversarials)
    failed.push_back(tag + ": ifgsm(n=1, lr=eps) != fgsm");
  AttackConfig many;
  many.n_iters = 5;
  AttackConfig no_momentum = many;
  no_momentum.momentum_mu = 0;
  const auto it = ifgsm(m, x, y, many).adversarials;
  if (mifgsm(m, x, y, no_momentum).adversarials != it)
    failed.push_back(tag + ": mifgsm(mu=0) != ifgsm");
  if (ensemble_multifool(EnsembleConfig<T>::uniform({&m}), x, y, many).adversarials != it)
    failed.push_back(tag + ": ensemble of one != ifgsm");
  return failed;
}

inline Outcome criterion_reductions() {
  ila::harness::DatasetSpec ds;
  ds.count = 48;
  ds.seed = 78;
  const auto data = ila::harness::load_dataset(ds);
  const std::span<const int> y(data.labels);
  std::vector<std::string> failed;
  std::size_t checks = 0;
  for (auto [arch, name] : {std::pair{Arch::kMiniCnn, "mini_cnn"},
                            std::pair{Arch::kMiniResnet, "mini_resnet"}}) {
    const auto m = random_model(arch, 60);
    for (auto& f : reduction_failures(m, data.images, y, std::string(name) + " f32"))
      failed.push_back(f);
    for (auto& f : reduction_failures(m.cast<double>(), data.images.cast<double>(), y,
                                      std::string(name) + " f64"))
      failed.push_back(f);
    checks += 6;
  }
  std::string detail = cat(checks - failed.size(), "/", checks,
                           " exact-equality checks hold (ifgsm(n=1,lr=eps)=fgsm, "
                           "mifgsm(mu=0)=ifgsm, ensemble of one=ifgsm; 2 archs x 2 precisions)");
  for (const auto& f : failed) detail += "; " + f;
  return verdict(3, "reduction laws", failed.empty(), detail);
}

// -- criterion 4 ----------------------------------------------------------------

inline Outcome criterion_losses() {
  using ila::intermediate::FeatureDelta;
  struct Case {
    std::string name;
    std::vector<double> ref, cur;
    bool flexible;
    double expected;
  };
  // Hand values: -(3*1 + 4*2) = -11; colinear -2 - 1; orthogonal -3 - 0.
  const std::vector<Case> cases{
      {"ilap [3,4].[1,2]", {3, 4}, {1, 2}, false, -11.0},
      {"ilap zero current", {3, 4}, {0, 0}, false, 0.0},
      {"ilaf colinear", {1, 0}, {2, 0}, true, -3.0},
      {"ilaf zero current", {1, 0}, {0, 0}, true, 0.0},
      {"ilaf orthogonal", {1, 0}, {0, 3}, true, -3.0},
  };
  double worst = 0;
  std::string failed;
  for (const auto& c : cases) {
    const FeatureDelta d(c.ref, c.cur);
    const double scalar = c.flexible ? ila::intermediate::ilaf_loss(d, 1.0)
                                     : ila::intermediate::ilap_loss(d);
    Tape<double> t;
    auto v = t.leaf(Tensor<double>({1, c.cur.size()}, c.cur), true);
    const Tensor<double> r({1, c.ref.size()}, c.ref);
    const double taped = c.flexible ? ila::intermediate::ilaf_loss(v, r, 1.0).value()[0]
                                    : ila::intermediate::ilap_loss(v, r).value()[0];
    const double err = std::max(std::abs(scalar - c.expected), std::abs(taped - c.expected));
    worst = std::max(worst, err);
    if (!(err < kLossTol)) failed += cat("; ", c.name, " off by ", err);
  }
  return verdict(4, "loss unit values", failed.empty(),
                 cat(cases.size(), " hand-computed cases, scalar and taped forms, worst error ",
                     worst, " (< ", kLossTol, ")", failed));
}

// -- criterion 11 ---------------------------------------------------------------

inline int run_cli(const std::string& cli, const fs::path& dir, const std::string& args) {
  const std::string cmd =
      "cd '" + dir.string() + "' && '" + cli + "' --threads 1 " + args + " >> cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline Outcome criterion_determinism(const std::string& cli, const fs::path& work) {
  Stopwatch clock;
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string data = " --count 48 --separation 6";
  // Each run: output dir and arguments. Later runs consume earlier outputs.
  const std::vector<std::pair<std::string, std::string>> runs{
      {"m1", "--seed 1 train --arch mini_cnn --width 0.25 --train-count 200 --test-count 48 "
             "--epochs 1 --separation 6"},
      {"m2", "--seed 2 train --arch mini_vgg --width 0.25 --train-count 200 --test-count 48 "
             "--epochs 1 --separation 6"},
      {"base", "--seed 3 attack --model m1/model.ilam --n-iters 10" + data},
      {"mf", "--seed 3 attack --attack multifool --model m1/model.ilam --ensemble m2/model.ilam "
             "--n-iters 10" + data},
      {"ila", "ila --model m1/model.ilam --baseline base/batch.ilab --n-iters 5"},
      {"tr", "transfer --batches base/batch.ilab mf/batch.ilab ila/ila.ilab "
             "--targets m1/model.ilam m2/model.ilam"},
      {"ang", "angle --model m1/model.ilam --batch-a base/batch.ilab --batch-b mf/batch.ilab"},
      {"bd", "--seed 4 boundary --model m1/model.ilam --batch-a base/batch.ilab --random-v "
             "--resolution 11"},
      {"sw", "sweep --kind reference --grid ifgsm multifool --source m1=m1/model.ilam "
             "--targets m2=m2/model.ilam --ensemble m1=m1/model.ilam m2=m2/model.ilam "
             "--candidates 0 1 2 --baseline-iters 4 --seed-iters 2 --ila-iters 2" + data},
  };
  std::size_t files = 0;
  std::vector<std::string> problems;
  for (const auto& [out, args] : runs) {
    if (run_cli(cli, dir, "--out " + out + " " + args) != 0) {
      problems.push_back(out + ": first run failed");
      continue;
    }
    const std::string rerun = out + "_rerun";
    if (run_cli(cli, dir, "--out " + rerun + " --config " + out + "/manifest.json " +
                              ila::harness::load_manifest(dir / out / "manifest.json").command) !=
        0) {
      problems.push_back(out + ": rerun failed");
      continue;
    }
    const auto first = ila::harness::load_manifest(dir / out / "manifest.json");
    const auto second = ila::harness::load_manifest(dir / rerun / "manifest.json");
    if (first.run_id != second.run_id) problems.push_back(out + ": run id changed");
    for (const auto& [role, name] : first.outputs) {
      ++files;
      const auto a = ila::io::read_text(dir / out / name);
      const auto b = ila::io::read_text(dir / rerun / name);
      if (a != b) problems.push_back(out + "/" + name + " differs");
    }
  }
  std::string detail = cat(runs.size(), " manifests (train, attack, multifool, ila, transfer, "
                                        "angle, boundary, sweep) rerun single-threaded; ",
                           files, " report files compared byte for byte; ", clock.seconds(),
                           " s");
  for (const auto& p : problems) detail += "; " + p;
  return verdict(11, "determinism", problems.empty() && files > 0, detail);
}

}  // namespace acceptance
