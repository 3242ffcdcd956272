#include "rntk/resnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>


#include "json.hpp"

#include "rntk/errors.hpp"
#include "rntk/rng.hpp"

namespace rntk {

namespace {

const double kHalfSqrt2 = std::numbers::sqrt2 / 2.0;

// Branch sign in f = (sqrt(2)/2) s (f^(1) - f^(2)).
constexpr double branch_sign(int p) { return p == 0 ? 1.0 : -1.0; }

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix M(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) M(i, j) = rng.normal();
  return M;
}

// Batched activations of one branch; columns index inputs.
struct BatchBranch {
  std::vector<Matrix> alpha;  // L + 1 entries, m x n
  std::vector<Matrix> relu;   // L entries, relu(preact)
  std::vector<Matrix> preact;
  Matrix output;  // K x n
};

void forward_branch(const ResNetParams& P, double a, const Matrix& Xt, BatchBranch& out,
                    bool keep_all) {
  const auto m = static_cast<double>(P.A.rows());
  const double in_scale = 1.0 / std::sqrt(m);
  const double pre_scale = std::sqrt(2.0 / m);
  const double res_scale = a / std::sqrt(m);
  const auto L = P.W.size();

  out.alpha.resize(keep_all ? L + 1 : 1);
  out.relu.resize(keep_all ? L : 1);
  out.preact.resize(keep_all ? L : 1);
  Matrix cur = in_scale * (P.A * Xt);
  if (keep_all) out.alpha[0] = cur;
  for (std::size_t l = 0; l < L; ++l) {
    Matrix& z = out.preact[keep_all ? l : 0];
    Matrix& s = out.relu[keep_all ? l : 0];
    z.noalias() = pre_scale * (P.W[l] * cur);
    s = z.cwiseMax(0.0);
    cur.noalias() += res_scale * (P.V[l] * s);
    if (keep_all) out.alpha[l + 1] = cur;
  }
  out.output.noalias() = P.head.transpose() * cur;
  if (!keep_all) out.alpha[0] = std::move(cur);
}

Matrix combine_outputs(const MirroredNet& net, const Matrix& out1, const Matrix& out2) {
  return (kHalfSqrt2 * net.output_scale()) * (out1 - out2);
}

void check_input(const MirroredNet& net, Eigen::Index d) {
  if (d != net.dim()) throw InvalidArgument("input dimension does not match the network");
}

BranchCache to_cache(BatchBranch&& b) {
  BranchCache c;
  for (auto& m : b.alpha) c.alpha.emplace_back(m.col(0));
  for (auto& m : b.preact) {
    c.preact.emplace_back(m.col(0));
    c.mask.emplace_back((m.col(0).array() > 0.0).cast<double>().matrix());
  }
  c.output = b.output.col(0);
  return c;
}

}  // namespace

MirroredNet MirroredNet::init_mirrored(Eigen::Index width, Eigen::Index dim, const KernelConfig& cfg,
                                       std::uint64_t seed, std::optional<int> classes,
                                       OutputScaling scaling) {
  if (width < 1) throw InvalidArgument("init_mirrored: width must be >= 1");
  if (dim < 2) throw InvalidArgument("init_mirrored: dimension must be >= 2");
  if (classes && *classes < 1) throw InvalidArgument("init_mirrored: classes must be >= 1");
  if (scaling == OutputScaling::kernel_normalized) {
    cfg.validate();
  } else if (cfg.depth < 1 || !(cfg.a >= 0.0 && cfg.a < 1.0)) {
    // raw scaling admits a = 0 so the residual-free limit can be tested
    throw InvalidArgument("init_mirrored: need depth >= 1 and 0 <= a < 1");
  }

  MirroredNet net;
  net.cfg_ = cfg;
  net.width_ = width;
  net.dim_ = dim;
  net.classes_ = classes;
  net.scaling_ = scaling;
  net.seed_ = seed;
  net.output_scale_ =
      scaling == OutputScaling::kernel_normalized ? std::sqrt(cfg.normalizer()) / cfg.a : 1.0;

  Rng rng(seed);
  ResNetParams& P = net.branches_[0];
  P.A = gaussian_matrix(width, dim, rng);
  for (int l = 0; l < cfg.depth; ++l) {
    P.W.push_back(gaussian_matrix(width, width, rng));
    P.V.push_back(gaussian_matrix(width, width, rng));
  }
  P.head = gaussian_matrix(width, classes.value_or(1), rng);
  net.branches_[1] = P;
  return net;
}

ResNetParams& MirroredNet::mutable_branch(int p) {
  ++version_;
  return branches_.at(static_cast<std::size_t>(p));
}

ForwardCache forward(const MirroredNet& net, const Eigen::Ref<const Vector>& x) {
  check_input(net, x.size());
  const Matrix Xt = x;
  ForwardCache cache;
  std::array<BatchBranch, 2> b;
  for (int p = 0; p < 2; ++p) forward_branch(net.branch(p), net.a(), Xt, b[static_cast<std::size_t>(p)], true);
  cache.output = combine_outputs(net, b[0].output, b[1].output).col(0);
  cache.branch[0] = to_cache(std::move(b[0]));
  cache.branch[1] = to_cache(std::move(b[1]));
  cache.version = net.version();
  return cache;
}

ForwardCache forward(const MirroredNet& net, const UnitVector& x) { return forward(net, x.coords()); }

Matrix BranchGradient::dW(int l) const {
  const auto i = static_cast<std::size_t>(l - 1);
  return a * gamma.at(i) * alpha_prev.at(i).transpose();
}

Matrix BranchGradient::dV(int l) const {
  const auto i = static_cast<std::size_t>(l - 1);
  return a * delta.at(static_cast<std::size_t>(l)) * eta.at(i).transpose();
}

GradientBundle backward(const MirroredNet& net, const ForwardCache& cache, std::optional<Vector> cotangent) {
  if (cache.version != net.version())
    throw InvalidState("backward: forward cache is stale (parameters changed since forward)");
  Vector e;
  if (cotangent) {
    e = *cotangent;
  } else {
    if (!net.scalar_mode()) throw UnsupportedMode("backward: class head needs an explicit cotangent");
    e = Vector::Ones(1);
  }
  if (e.size() != net.outputs()) throw InvalidArgument("backward: cotangent has the wrong length");

  const auto m = static_cast<double>(net.width());
  const double a = net.a();
  const double gamma_scale = std::sqrt(2.0) / m;
  const double eta_scale = 1.0 / std::sqrt(m);
  const int L = net.depth();

  GradientBundle bundle;
  for (int p = 0; p < 2; ++p) {
    const ResNetParams& P = net.branch(p);
    const BranchCache& c = cache.branch[static_cast<std::size_t>(p)];
    BranchGradient& g = bundle.branch[static_cast<std::size_t>(p)];
    g.a = a;
    g.delta.assign(static_cast<std::size_t>(L) + 1, Vector());
    g.gamma.resize(static_cast<std::size_t>(L));
    g.eta.resize(static_cast<std::size_t>(L));
    g.alpha_prev.resize(static_cast<std::size_t>(L));

    Vector delta = (branch_sign(p) * kHalfSqrt2 * net.output_scale()) * (P.head * e);
    g.delta[static_cast<std::size_t>(L)] = delta;
    for (int l = L; l >= 1; --l) {
      const auto i = static_cast<std::size_t>(l - 1);
      g.gamma[i] = gamma_scale * c.mask[i].cwiseProduct(P.V[i].transpose() * delta);
      g.eta[i] = eta_scale * c.preact[i].cwiseMax(0.0);
      g.alpha_prev[i] = c.alpha[i];
      delta += a * (P.W[i].transpose() * g.gamma[i]);
      g.delta[i] = delta;
    }
  }
  return bundle;
}

RnkValue empirical_rnk_detail(const GradientBundle& gx, const GradientBundle& gx2) {
  RnkValue out;
  double branch_inner[2];
  for (std::size_t p = 0; p < 2; ++p) {
    const BranchGradient& u = gx.branch[p];
    const BranchGradient& w = gx2.branch[p];
    double s = 0.0;
    for (std::size_t i = 0; i < u.gamma.size(); ++i) {
      s += u.gamma[i].dot(w.gamma[i]) * u.alpha_prev[i].dot(w.alpha_prev[i]);
      s += u.delta[i + 1].dot(w.delta[i + 1]) * u.eta[i].dot(w.eta[i]);
    }
    branch_inner[p] = u.a * u.a * s;
  }
  // <grad_p f, grad_p f'> = r^(p) / 2 because the combined output carries sqrt(2)/2.
  out.branch1 = 2.0 * branch_inner[0];
  out.branch2 = 2.0 * branch_inner[1];
  out.value = branch_inner[0] + branch_inner[1];
  return out;
}

RnkValue empirical_rnk_detail(const MirroredNet& net, const Eigen::Ref<const Vector>& x,
                              const Eigen::Ref<const Vector>& x2) {
  if (!net.scalar_mode()) throw UnsupportedMode("empirical_rnk: defined for the scalar head only");
  const auto gx = backward(net, forward(net, x));
  const auto gx2 = backward(net, forward(net, x2));
  return empirical_rnk_detail(gx, gx2);
}

double empirical_rnk(const MirroredNet& net, const Eigen::Ref<const Vector>& x,
                     const Eigen::Ref<const Vector>& x2) {
  return empirical_rnk_detail(net, x, x2).value;
}

namespace {

// Rank-1 gradient factors for a batch of inputs (columns), scalar head.
struct BatchFactors {
  std::vector<Matrix> gamma, alpha_prev, delta, eta;  // per layer, m x k
};

std::array<BatchFactors, 2> batch_factors(const MirroredNet& net, const Matrix& X) {
  check_input(net, X.cols());
  const Matrix Xt = X.transpose();
  const auto m = static_cast<double>(net.width());
  const double a = net.a();
  const double gamma_scale = std::sqrt(2.0) / m;
  const double eta_scale = 1.0 / std::sqrt(m);
  const int L = net.depth();
  std::array<BatchFactors, 2> out;
  for (int p = 0; p < 2; ++p) {
    const ResNetParams& P = net.branch(p);
    BatchBranch b;
    forward_branch(P, a, Xt, b, true);
    BatchFactors& f = out[static_cast<std::size_t>(p)];
    f.gamma.resize(static_cast<std::size_t>(L));
    f.alpha_prev.resize(static_cast<std::size_t>(L));
    f.delta.resize(static_cast<std::size_t>(L));
    f.eta.resize(static_cast<std::size_t>(L));
    Matrix delta = ((branch_sign(p) * kHalfSqrt2 * net.output_scale()) * P.head.col(0)).replicate(1, X.rows());
    for (int l = L; l >= 1; --l) {
      const auto i = static_cast<std::size_t>(l - 1);
      const Matrix vt_delta = P.V[i].transpose() * delta;
      f.gamma[i] = gamma_scale * (b.preact[i].array() > 0.0).select(vt_delta, 0.0);
      f.eta[i] = eta_scale * b.relu[i];
      f.alpha_prev[i] = std::move(b.alpha[i]);
      f.delta[i] = delta;
      if (l > 1) delta.noalias() += a * (P.W[i].transpose() * f.gamma[i]);
    }
  }
  return out;
}

}  // namespace

Vector empirical_rnk_pairs(const MirroredNet& net, const Matrix& P1, const Matrix& P2) {
  if (!net.scalar_mode()) throw UnsupportedMode("empirical_rnk: defined for the scalar head only");
  if (P1.rows() != P2.rows()) throw InvalidArgument("empirical_rnk_pairs: row counts differ");
  const Eigen::Index k = P1.rows();
  Matrix both(2 * k, net.dim());
  both << P1, P2;
  const auto f = batch_factors(net, both);
  const double a2 = net.a() * net.a();
  Vector out = Vector::Zero(k);
  for (const auto& g : f) {
    for (std::size_t i = 0; i < g.gamma.size(); ++i) {
      auto dots = [k](const Matrix& M) {
        return (M.leftCols(k).array() * M.rightCols(k).array()).colwise().sum().transpose().eval();
      };
      out.array() += a2 * (dots(g.gamma[i]) * dots(g.alpha_prev[i]) + dots(g.delta[i]) * dots(g.eta[i]));
    }
  }
  return out;
}

Matrix empirical_rnk_matrix(const MirroredNet& net, const Matrix& P) {
  if (!net.scalar_mode()) throw UnsupportedMode("empirical_rnk: defined for the scalar head only");
  const auto f = batch_factors(net, P);
  const double a2 = net.a() * net.a();
  Matrix R = Matrix::Zero(P.rows(), P.rows());
  for (const auto& g : f) {
    for (std::size_t i = 0; i < g.gamma.size(); ++i) {
      const Matrix gg = g.gamma[i].transpose() * g.gamma[i];
      const Matrix aa = g.alpha_prev[i].transpose() * g.alpha_prev[i];
      const Matrix dd = g.delta[i].transpose() * g.delta[i];
      const Matrix ee = g.eta[i].transpose() * g.eta[i];
      R.array() += a2 * (gg.array() * aa.array() + dd.array() * ee.array());
    }
  }
  // exact symmetry
  R = 0.5 * (R + R.transpose()).eval();
  return R;
}

Matrix predict_batch(const MirroredNet& net, const Matrix& X, Eigen::Index chunk) {
  check_input(net, X.cols());
  Matrix out(X.rows(), net.outputs());
  BatchBranch b1, b2;
  for (Eigen::Index start = 0; start < X.rows(); start += chunk) {
    const Eigen::Index len = std::min(chunk, X.rows() - start);
    const Matrix Xt = X.middleRows(start, len).transpose();
    forward_branch(net.branch(0), net.a(), Xt, b1, false);
    forward_branch(net.branch(1), net.a(), Xt, b2, false);
    out.middleRows(start, len) = combine_outputs(net, b1.output, b2.output).transpose();
  }
  return out;
}

Vector network_function_snapshot(const MirroredNet& net, const Matrix& probes) {
  if (!net.scalar_mode()) throw UnsupportedMode("network_function_snapshot: scalar head only");
  return predict_batch(net, probes).col(0);
}

std::vector<std::int64_t> checkpoint_schedule(std::int64_t steps, const std::vector<std::int64_t>& pinned) {
  std::vector<std::int64_t> s{0};
  for (std::int64_t k = 1; k < steps; k *= 2) s.push_back(k);
  if (steps > 0) s.push_back(steps);
  for (auto p : pinned)
    if (p >= 0 && p <= steps) s.push_back(p);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

namespace {

struct LossEval {
  double loss = 0.0;
  double label_err = 0.0;
  Matrix residual;  // K x n, dLoss/dF
};

LossEval evaluate_loss(const Matrix& F, const SphereDataset& ds, Loss loss) {
  const Eigen::Index n = ds.n();
  const Eigen::Index K = F.rows();
  LossEval ev;
  ev.residual.resize(K, n);
  if (ds.kind == LabelKind::regression) {
    ev.residual = F;
    ev.residual.row(0) -= ds.y.transpose();
    ev.loss = 0.5 * ev.residual.squaredNorm() / static_cast<double>(n);
    ev.residual /= static_cast<double>(n);
    ev.label_err = std::nan("");
    return ev;
  }
  std::int64_t wrong = 0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto label = static_cast<Eigen::Index>(ds.y[i]);
    Eigen::Index pred = 0;
    F.col(i).maxCoeff(&pred);
    if (pred != label) ++wrong;
    if (loss == Loss::squared) {
      ev.residual.col(i) = F.col(i);
      ev.residual(label, i) -= 1.0;
      total += 0.5 * ev.residual.col(i).squaredNorm();
    } else {
      const double mx = F.col(i).maxCoeff();
      const Vector ex = (F.col(i).array() - mx).exp();
      const double z = ex.sum();
      total += -(F(label, i) - mx - std::log(z));
      ev.residual.col(i) = ex / z;
      ev.residual(label, i) -= 1.0;
    }
  }
  ev.loss = total / static_cast<double>(n);
  ev.residual /= static_cast<double>(n);
  ev.label_err = static_cast<double>(wrong) / static_cast<double>(n);
  return ev;
}

void validate_training(const MirroredNet& net, const SphereDataset& ds, const TrainOptions& opts) {
  if (!(opts.lr > 0.0)) throw InvalidArgument("train_gd: lr must be > 0");
  if (opts.steps < 0) throw InvalidArgument("train_gd: steps must be >= 0");
  if (ds.d() != net.dim()) throw InvalidArgument("train_gd: data dimension does not match the network");
  if (ds.kind == LabelKind::regression) {
    if (!net.scalar_mode()) throw UnsupportedMode("train_gd: regression data needs the scalar head");
    if (opts.loss != Loss::squared) throw UnsupportedMode("train_gd: regression uses the squared loss");
  } else {
    if (net.scalar_mode() || net.outputs() != ds.num_classes)
      throw UnsupportedMode("train_gd: class data needs a K-output head with K = num_classes");
  }
  if (opts.probe_pair_lhs.rows() != opts.probe_pair_rhs.rows())
    throw InvalidArgument("train_gd: probe pair matrices differ in rows");
  if ((opts.probe_pair_lhs.rows() > 0 || opts.probe_inputs.rows() > 0) && !net.scalar_mode())
    throw UnsupportedMode("train_gd: kernel and function probes need the scalar head");
}

}  // namespace

TrainResult train_gd(MirroredNet& net, const SphereDataset& ds, const TrainOptions& opts) {
  validate_training(net, ds, opts);
  const auto schedule = checkpoint_schedule(opts.steps, opts.pinned_checkpoints);
  std::size_t next_ckpt = 0;

  const int L = net.depth();
  const auto m = static_cast<double>(net.width());
  const double a = net.a();
  const double gamma_scale = std::sqrt(2.0) / m;
  const double eta_scale = 1.0 / std::sqrt(m);
  const Matrix Xt = ds.X.transpose();

  TrainResult result;
  std::array<BatchBranch, 2> b;
  Matrix delta, delta_prev, vt_delta, gamma;

  for (std::int64_t step = 0;; ++step) {
    for (int p = 0; p < 2; ++p) forward_branch(net.branch(p), a, Xt, b[static_cast<std::size_t>(p)], true);
    const Matrix F = combine_outputs(net, b[0].output, b[1].output);
    const LossEval ev = evaluate_loss(F, ds, opts.loss);

    if (!std::isfinite(ev.loss)) {
      result.diverged = true;
      result.diverged_step = step;
      return result;
    }

    if (next_ckpt < schedule.size() && schedule[next_ckpt] == step) {
      TrainRecord rec;
      rec.step = step;
      rec.t = static_cast<double>(step) * opts.lr;
      rec.train_loss = ev.loss;
      rec.label_err = ev.label_err;
      if (opts.probe_pair_lhs.rows() > 0)
        rec.probe_rnk = empirical_rnk_pairs(net, opts.probe_pair_lhs, opts.probe_pair_rhs);
      if (opts.probe_inputs.rows() > 0) rec.probe_fn = network_function_snapshot(net, opts.probe_inputs);
      if (opts.on_checkpoint) opts.on_checkpoint(net, rec);
      result.records.push_back(std::move(rec));
      ++next_ckpt;
    }
    if (step == opts.steps) break;

    // Backward through both branches with the layer-l update applied as soon as
    // layer l's factors are known; lower layers only read their own weights.
    for (int p = 0; p < 2; ++p) {
      ResNetParams& P = net.mutable_branch(p);
      BatchBranch& c = b[static_cast<std::size_t>(p)];
      delta.noalias() = (branch_sign(p) * kHalfSqrt2 * net.output_scale()) * (P.head * ev.residual);
      for (int l = L; l >= 1; --l) {
        const auto i = static_cast<std::size_t>(l - 1);
        vt_delta.noalias() = P.V[i].transpose() * delta;
        gamma = gamma_scale * (c.preact[i].array() > 0.0).select(vt_delta, 0.0);
        if (l > 1) {
          delta_prev = delta;
          delta_prev.noalias() += a * (P.W[i].transpose() * gamma);
        }
        P.W[i].noalias() -= (opts.lr * a) * (gamma * c.alpha[i].transpose());
        P.V[i].noalias() -= (opts.lr * a * eta_scale) * (delta * c.relu[i].transpose());
        if (l > 1) delta.swap(delta_prev);
      }
    }
    result.steps_run = step + 1;
  }
  return result;
}

void save_checkpoint(const MirroredNet& net, const std::filesystem::path& bin_path,
                     const CheckpointMeta& meta) {
  std::ofstream out(bin_path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open " + bin_path.string());
  auto put = [&](const Matrix& M) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = M;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
  };
  for (int p = 0; p < 2; ++p) {
    const auto& P = net.branch(p);
    put(P.A);
    for (const auto& W : P.W) put(W);
    for (const auto& V : P.V) put(V);
    put(P.head);
  }
  nlohmann::ordered_json j;
  j["m"] = net.width();
  j["d"] = net.dim();
  j["L"] = net.depth();
  j["a"] = net.a();
  j["seed"] = net.seed();
  j["step"] = meta.step;
  j["lr"] = meta.lr;
  j["loss"] = meta.loss;
  j["classes"] = net.classes() ? nlohmann::json(*net.classes()) : nlohmann::json(nullptr);
  j["output_scaling"] = net.scaling() == OutputScaling::raw ? "raw" : "kernel_normalized";
  j["layout"] = "branch1,branch2; each A(m x d), W1..WL, V1..VL (m x m), head(m x K); row-major f64 LE";
  std::ofstream side(std::filesystem::path(bin_path).concat(".json"), std::ios::binary);
  side << j.dump(2) << '\n';
}

MirroredNet load_checkpoint(const std::filesystem::path& bin_path) {
  std::ifstream side(std::filesystem::path(bin_path).concat(".json"), std::ios::binary);
  if (!side) throw InvalidArgument("missing checkpoint sidecar for " + bin_path.string());
  const auto j = nlohmann::json::parse(side);
  KernelConfig cfg{j.at("L").get<int>(), j.at("a").get<double>()};
  std::optional<int> classes;
  if (!j.at("classes").is_null()) classes = j.at("classes").get<int>();
  const OutputScaling scaling =
      j.at("output_scaling").get<std::string>() == "raw" ? OutputScaling::raw : OutputScaling::kernel_normalized;
  MirroredNet net = MirroredNet::init_mirrored(1, j.at("d").get<Eigen::Index>(), cfg, j.at("seed").get<std::uint64_t>(),
                                               classes, scaling);
  const auto m = j.at("m").get<Eigen::Index>();
  const auto d = net.dim_;
  net.width_ = m;
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + bin_path.string());
  auto get = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
    if (!in) throw InvalidArgument("truncated checkpoint " + bin_path.string());
    return Matrix(rm);
  };
  for (auto& P : net.branches_) {
    P.A = get(m, d);
    for (auto& W : P.W) W = get(m, m);
    for (auto& V : P.V) V = get(m, m);
    P.head = get(m, classes.value_or(1));
  }
  return net;
}

}  // namespace rntk
