#pragma once

// Canonical low-rank approximation y ~ sum_l b_l prod_i v_l^(i)(xi_i), where
// each v_l^(i) is a polynomial in one standard variable. Built greedily: a
// correction step fits a new rank-one term to the residual by alternated
// least squares, an updating step refits all weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "patc/error.hpp"
#include "patc/polybasis.hpp"

namespace patc {

struct ExperimentalDesign
{
  Eigen::MatrixXd xi; ///< M x n, standard space
  Eigen::VectorXd y;  ///< M responses
  std::uint64_t seed = 0;
  std::string scenario_hash;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
  std::size_t dimension() const { return static_cast<std::size_t>(xi.cols()); }

  void append(const Eigen::MatrixXd& more_xi, const Eigen::VectorXd& more_y)
  {
    if (more_xi.rows() != more_y.size() || (xi.size() && more_xi.cols() != xi.cols()))
      throw ValidationError("experimental design batch does not match");
    Eigen::MatrixXd x(xi.rows() + more_xi.rows(), more_xi.cols());
    Eigen::VectorXd v(y.size() + more_y.size());
    if (xi.rows())
      x.topRows(xi.rows()) = xi;
    x.bottomRows(more_xi.rows()) = more_xi;
    v << y, more_y;
    xi = std::move(x);
    y = std::move(v);
  }
};

struct LraModel
{
  std::vector<PolyFamily> families;
  std::vector<int> degrees;
  Eigen::VectorXd weights;                    ///< b_l
  std::vector<std::vector<Eigen::VectorXd>> z; ///< z[l][i], length degrees[i] + 1
  std::string scenario_hash;

  int rank() const { return static_cast<int>(z.size()); }
  std::size_t dimension() const { return families.size(); }

  /// Coefficients plus weights.
  std::size_t coefficient_count() const
  {
    std::size_t per = 1;
    for (int p : degrees)
      per += static_cast<std::size_t>(p) + 1;
    return per * z.size();
  }
};

struct FitOptions
{
  double als_tolerance = 1e-6;
  int max_sweeps = 50;
  int validation_stride = 5; ///< every stride-th ED row is held out for selection
};

struct CandidateScore
{
  int rank = 0;
  int degree = 0;
  double validation_error = std::numeric_limits<double>::infinity();
  bool ill_posed = false;
};

struct FitReport
{
  std::vector<double> errors; ///< relative empirical error after each rank of the final fit
  int chosen_rank = 0;
  std::vector<int> degrees;
  std::vector<int> als_sweeps; ///< per correction step of the final fit
  double validation_error = std::numeric_limits<double>::infinity();
  std::vector<CandidateScore> candidates;
  std::vector<std::string> warnings;
};

/// Per-dimension basis values on a set of points.
class LraBasis
{
 public:
  LraBasis(const Eigen::MatrixXd& xi, const std::vector<PolyFamily>& families,
           const std::vector<int>& degrees)
      : degrees_(degrees)
  {
    const auto n = static_cast<std::size_t>(xi.cols());
    if (families.size() != n || degrees.size() != n)
      throw ValidationError("basis families and degrees must match the input dimension");
    psi_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (degrees[i] < 0)
        throw ValidationError("polynomial degree must be non-negative");
      auto& m = psi_[i];
      m.resize(xi.rows(), degrees[i] + 1);
      for (Eigen::Index r = 0; r < xi.rows(); ++r)
        eval_basis_into(families[i], degrees[i], xi(r, static_cast<Eigen::Index>(i)), m.row(r));
    }
  }

  std::size_t dimension() const { return psi_.size(); }
  Eigen::Index points() const { return psi_.empty() ? 0 : psi_[0].rows(); }
  const Eigen::MatrixXd& operator[](std::size_t i) const { return psi_[i]; }
  const std::vector<int>& degrees() const { return degrees_; }

  /// Values of one rank-one term at every point.
  Eigen::VectorXd rank_one(const std::vector<Eigen::VectorXd>& z) const
  {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(points());
    for (std::size_t i = 0; i < psi_.size(); ++i)
      w.array() *= (psi_[i] * z[i]).array();
    return w;
  }

  LraBasis rows(const std::vector<Eigen::Index>& idx) const
  {
    LraBasis out;
    out.degrees_ = degrees_;
    out.psi_.resize(psi_.size());
    for (std::size_t i = 0; i < psi_.size(); ++i)
      out.psi_[i] = psi_[i](idx, Eigen::all);
    return out;
  }

 private:
  LraBasis() = default;
  std::vector<Eigen::MatrixXd> psi_;
  std::vector<int> degrees_;
};

namespace detail {

/// Relative errors below this are indistinguishable from an exact fit.
inline constexpr double kRoundoffError = 1e-20;

inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& a, const Eigen::VectorXd& b)
{
  return a.completeOrthogonalDecomposition().solve(b);
}

/// Population variance.
inline double variance(const Eigen::VectorXd& y)
{
  if (y.size() == 0)
    return 0.0;
  return (y.array() - y.mean()).square().mean();
}

inline void check_well_posed(const LraBasis& basis)
{
  std::size_t total = 0;
  for (int p : basis.degrees())
    total += static_cast<std::size_t>(p) + 1;
  if (static_cast<std::size_t>(basis.points()) < total)
    throw IllPosedFitError("experimental design of " + std::to_string(basis.points()) +
                           " points is smaller than the " + std::to_string(total) +
                           " coefficients of a rank-one term; increase the design size");
  for (std::size_t i = 0; i < basis.dimension(); ++i) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis[i]);
    if (qr.rank() < basis[i].cols())
      throw IllPosedFitError("least-squares design of dimension " + std::to_string(i + 1) +
                             " is rank deficient");
  }
}

} // namespace detail

struct CorrectionResult
{
  std::vector<Eigen::VectorXd> z;
  int sweeps = 0;
};

/// New rank-one term fitted to `residual` by alternated least squares,
/// starting from v^(i) = 1. Each z^(i) is returned with unit norm unless the
/// term vanishes.
inline CorrectionResult correction_step(const LraBasis& basis, const Eigen::VectorXd& residual,
                                        const FitOptions& opts = {})
{
  detail::check_well_posed(basis);
  const std::size_t n = basis.dimension();
  const Eigen::Index m = basis.points();
  if (residual.size() != m)
    throw ValidationError("residual length does not match the design");
  CorrectionResult out;
  out.z.resize(n);
  std::vector<Eigen::VectorXd> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.z[i] = Eigen::VectorXd::Zero(basis.degrees()[i] + 1);
    out.z[i][0] = 1.0;
    v[i] = Eigen::VectorXd::Ones(m);
  }
  const double scale = std::max(residual.squaredNorm(), std::numeric_limits<double>::min());
  double previous = std::numeric_limits<double>::infinity();
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    out.sweeps = sweep;
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::VectorXd c = Eigen::VectorXd::Ones(m);
      for (std::size_t j = 0; j < n; ++j)
        if (j != i)
          c.array() *= v[j].array();
      if (c.cwiseAbs().maxCoeff() == 0.0)
        continue;
      const Eigen::MatrixXd a = c.asDiagonal() * basis[i];
      out.z[i] = detail::least_squares(a, residual);
      v[i] = basis[i] * out.z[i];
    }
    Eigen::VectorXd w = v[0];
    for (std::size_t i = 1; i < n; ++i)
      w.array() *= v[i].array();
    const double err = (residual - w).squaredNorm() / scale;
    const bool settled = std::abs(previous - err) <= opts.als_tolerance * std::max(err, 1e-300) ||
                         err < 1e-28;
    previous = err;
    if (settled)
      break;
  }
  for (auto& zi : out.z) {
    const double nrm = zi.norm();
    if (nrm > 0.0)
      zi /= nrm;
  }
  return out;
}

/// Least-squares weights of the rank-one terms whose ED values are the
/// columns of `omega`. Columns that are collinear with earlier ones keep
/// their entry from `previous` (0 if absent).
inline Eigen::VectorXd updating_step(const Eigen::MatrixXd& omega, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& previous = {},
                                     std::vector<std::string>* warnings = nullptr)
{
  const Eigen::Index r = omega.cols();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
  for (Eigen::Index l = 0; l < std::min(r, previous.size()); ++l)
    b[l] = previous[l];
  // Greedy column selection keeps the earliest independent terms.
  std::vector<Eigen::Index> keep;
  std::vector<Eigen::Index> dropped;
  for (Eigen::Index l = 0; l < r; ++l) {
    std::vector<Eigen::Index> trial = keep;
    trial.push_back(l);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(omega(Eigen::all, trial));
    if (qr.rank() == static_cast<Eigen::Index>(trial.size()))
      keep = std::move(trial);
    else
      dropped.push_back(l);
  }
  Eigen::VectorXd target = y;
  for (auto l : dropped) {
    target -= b[l] * omega.col(l);
    if (warnings)
      warnings->push_back("rank-one term " + std::to_string(l + 1) +
                          " is collinear with earlier terms; its weight is kept");
  }
  if (!keep.empty()) {
    const Eigen::VectorXd bk = detail::least_squares(omega(Eigen::all, keep), target);
    for (std::size_t k = 0; k < keep.size(); ++k)
      b[keep[k]] = bk[static_cast<Eigen::Index>(k)];
  }
  return b;
}

namespace detail {

struct RankPath
{
  LraModel model;
  std::vector<double> errors;
  std::vector<int> sweeps;
};

/// Correction plus updating for ranks 1..max_rank; calls `visit(path)` after
/// each rank and stops early when it returns false.
template <class Visit>
void grow_ranks(const LraBasis& basis, const Eigen::VectorXd& y,
                const std::vector<PolyFamily>& families, int max_rank, const FitOptions& opts,
                std::vector<std::string>& warnings, Visit&& visit)
{
  RankPath path;
  path.model.families = families;
  path.model.degrees = basis.degrees();
  const double var = variance(y);
  Eigen::MatrixXd omega(y.size(), 0);
  Eigen::VectorXd residual = y;
  for (int r = 1; r <= max_rank; ++r) {
    auto corr = correction_step(basis, residual, opts);
    omega.conservativeResize(Eigen::NoChange, r);
    omega.col(r - 1) = basis.rank_one(corr.z);
    path.model.z.push_back(std::move(corr.z));
    path.model.weights = updating_step(omega, y, path.model.weights, &warnings);
    residual = y - omega * path.model.weights;
    path.errors.push_back(residual.squaredNorm() / static_cast<double>(y.size()) / var);
    path.sweeps.push_back(corr.sweeps);
    if (!visit(static_cast<const RankPath&>(path)))
      return;
  }
}

} // namespace detail

inline double evaluate(const LraModel& model, const Eigen::VectorXd& xi)
{
  double sum = 0.0;
  std::vector<Eigen::VectorXd> psi(model.dimension());
  for (std::size_t i = 0; i < model.dimension(); ++i)
    psi[i] = eval_basis(model.families[i], model.degrees[i], xi[static_cast<Eigen::Index>(i)]);
  for (int l = 0; l < model.rank(); ++l) {
    double prod = model.weights[l];
    for (std::size_t i = 0; i < model.dimension(); ++i)
      prod *= psi[i].dot(model.z[static_cast<std::size_t>(l)][i]);
    sum += prod;
  }
  return sum;
}

/// Responses at every row of `xi`.
inline Eigen::VectorXd evaluate(const LraModel& model, const Eigen::MatrixXd& xi)
{
  if (static_cast<std::size_t>(xi.cols()) != model.dimension())
    throw ValidationError("points have " + std::to_string(xi.cols()) + " columns, model has " +
                          std::to_string(model.dimension()) + " inputs");
  const LraBasis basis(xi, model.families, model.degrees);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(xi.rows());
  for (int l = 0; l < model.rank(); ++l)
    out += model.weights[l] * basis.rank_one(model.z[static_cast<std::size_t>(l)]);
  return out;
}

/// Relative empirical error of a model on a design.
inline double relative_error(const LraModel& model, const ExperimentalDesign& ed)
{
  const double var = detail::variance(ed.y);
  const Eigen::VectorXd r = ed.y - evaluate(model, ed.xi);
  return r.squaredNorm() / static_cast<double>(ed.y.size()) / var;
}

inline LraModel constant_model(std::size_t n, double value, const PolyFamily& fam)
{
  LraModel m;
  m.families.assign(n, fam);
  m.degrees.assign(n, 0);
  m.weights = Eigen::VectorXd::Constant(1, value);
  m.z.assign(1, std::vector<Eigen::VectorXd>(n, Eigen::VectorXd::Ones(1)));
  return m;
}

struct LraFit
{
  LraModel model;
  FitReport report;
};

/// Candidate search over ranks and a common degree, scored on a held-out
/// split, then a refit of the winner on the whole design.
inline LraFit fit(const ExperimentalDesign& ed, std::vector<int> rank_candidates,
                  std::vector<int> degree_candidates, const FitOptions& opts = {},
                  const PolyFamily& family = PolyFamily::hermite())
{
  if (ed.xi.rows() != ed.y.size())
    throw ValidationError("design inputs and responses are not aligned");
  if (ed.size() == 0)
    throw IllPosedFitError("experimental design is empty");
  if (!ed.y.allFinite())
    throw ValidationError("design responses must be finite");
  std::sort(rank_candidates.begin(), rank_candidates.end());
  std::sort(degree_candidates.begin(), degree_candidates.end());
  if (rank_candidates.empty() || degree_candidates.empty() || rank_candidates.front() < 1 ||
      degree_candidates.front() < 0)
    throw ValidationError("rank candidates must be >= 1 and degrees >= 0");

  const std::size_t n = ed.dimension();
  const std::vector<PolyFamily> families(n, family);
  LraFit out;
  if (ed.y.maxCoeff() == ed.y.minCoeff()) {
    out.model = constant_model(n, ed.y[0], family);
    out.model.scenario_hash = ed.scenario_hash;
    out.report.errors = {0.0};
    out.report.chosen_rank = 1;
    out.report.degrees = out.model.degrees;
    out.report.validation_error = 0.0;
    out.report.warnings.push_back("constant response; fitted a constant model");
    return out;
  }

  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> valid;
  for (Eigen::Index r = 0; r < ed.xi.rows(); ++r)
    (opts.validation_stride > 1 && r % opts.validation_stride == opts.validation_stride - 1
       ? valid
       : train)
      .push_back(r);
  if (valid.empty())
    valid = train;
  const Eigen::VectorXd y_train = ed.y(train);
  const Eigen::VectorXd y_valid = ed.y(valid);
  const double var_valid = std::max(detail::variance(y_valid), std::numeric_limits<double>::min());
  const int max_rank = rank_candidates.back();

  double best = std::numeric_limits<double>::infinity();
  int best_rank = 0;
  int best_degree = 0;
  std::string last_problem;
  for (int p : degree_candidates) {
    const std::vector<int> degrees(n, p);
    try {
      const LraBasis full(ed.xi, families, degrees);
      const LraBasis tb = full.rows(train);
      const LraBasis vb = full.rows(valid);
      double prev_err = std::numeric_limits<double>::infinity();
      std::vector<std::string> scratch;
      detail::grow_ranks(tb, y_train, families, max_rank, opts, scratch, [&](const auto& path) {
        const int r = path.model.rank();
        Eigen::VectorXd pred = Eigen::VectorXd::Zero(vb.points());
        for (int l = 0; l < r; ++l)
          pred += path.model.weights[l] * vb.rank_one(path.model.z[static_cast<std::size_t>(l)]);
        const double err = (y_valid - pred).squaredNorm() / static_cast<double>(valid.size()) /
                           var_valid;
        // Below round-off every candidate is exact; the first (smallest) one wins.
        const double score = std::max(err, detail::kRoundoffError);
        const bool candidate =
          std::find(rank_candidates.begin(), rank_candidates.end(), r) != rank_candidates.end();
        if (candidate) {
          out.report.candidates.push_back({r, p, err, false});
          if (score < best) {
            best = score;
            best_rank = r;
            best_degree = p;
          }
        }
        const bool improving = score < prev_err;
        prev_err = std::min(prev_err, score);
        return improving;
      });
    } catch (const IllPosedFitError& e) {
      out.report.candidates.push_back({0, p, std::numeric_limits<double>::infinity(), true});
      last_problem = e.what();
    }
  }
  if (best_rank == 0)
    throw IllPosedFitError("no rank/degree candidate is well posed (" + last_problem +
                           "); increase the experimental design size");

  const std::vector<int> degrees(n, best_degree);
  const LraBasis basis(ed.xi, families, degrees);
  detail::grow_ranks(basis, ed.y, families, best_rank, opts, out.report.warnings,
                     [&](const auto& path) {
                       if (path.model.rank() == best_rank) {
                         out.model = path.model;
                         out.report.errors = path.errors;
                         out.report.als_sweeps = path.sweeps;
                       }
                       return true;
                     });
  out.model.scenario_hash = ed.scenario_hash;
  out.report.chosen_rank = best_rank;
  out.report.degrees = degrees;
  for (const auto& c : out.report.candidates)
    if (c.rank == best_rank && c.degree == best_degree)
      out.report.validation_error = c.validation_error;
  return out;
}

struct Moments
{
  double mean = 0.0;
  double variance = 0.0;
  std::vector<std::string> warnings;
};

/// Mean and variance of the model under independent inputs distributed by
/// the weights of its (orthonormal) families.
inline Moments analytic_moments(const LraModel& model)
{
  Moments m;
  const int r = model.rank();
  const std::size_t n = model.dimension();
  for (int l = 0; l < r; ++l) {
    const auto& zl = model.z[static_cast<std::size_t>(l)];
    double prod0 = model.weights[l];
    for (std::size_t i = 0; i < n; ++i)
      prod0 *= zl[i][0];
    m.mean += prod0;
    for (int k = 0; k < r; ++k) {
      const auto& zk = model.z[static_cast<std::size_t>(k)];
      double full = 1.0;
      double constant = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        full *= zl[i].dot(zk[i]);
        constant *= zl[i][0] * zk[i][0];
      }
      m.variance += model.weights[l] * model.weights[k] * (full - constant);
    }
  }
  if (m.variance < 0.0) {
    if (m.variance < -1e-10)
      m.warnings.push_back("negative variance " + std::to_string(m.variance) + " clipped to 0");
    m.variance = 0.0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const LraModel& m)
{
  nlohmann::json j;
  j["rank"] = m.rank();
  j["scenario_hash"] = m.scenario_hash;
  j["degrees"] = m.degrees;
  auto fams = nlohmann::json::array();
  for (const auto& f : m.families)
    fams.push_back({{"kind", f.name()}, {"alpha", f.alpha}, {"beta", f.beta}});
  j["families"] = fams;
  j["weights"] = std::vector<double>(m.weights.data(), m.weights.data() + m.weights.size());
  auto terms = nlohmann::json::array();
  for (const auto& zl : m.z) {
    auto dims = nlohmann::json::array();
    for (const auto& zi : zl)
      dims.push_back(std::vector<double>(zi.data(), zi.data() + zi.size()));
    terms.push_back(dims);
  }
  j["coefficients"] = terms;
  return j;
}

inline LraModel model_from_json(const nlohmann::json& j)
{
  try {
    LraModel m;
    m.scenario_hash = j.value("scenario_hash", "");
    m.degrees = j.at("degrees").get<std::vector<int>>();
    for (const auto& f : j.at("families"))
      m.families.push_back(PolyFamily::from_name(f.at("kind").get<std::string>(),
                                                 f.value("alpha", 0.0), f.value("beta", 0.0)));
    const auto w = j.at("weights").get<std::vector<double>>();
    m.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    for (const auto& term : j.at("coefficients")) {
      std::vector<Eigen::VectorXd> zl;
      for (const auto& dim : term) {
        const auto v = dim.get<std::vector<double>>();
        zl.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
      m.z.push_back(std::move(zl));
    }
    if (m.families.size() != m.degrees.size() || m.z.size() != w.size())
      throw ValidationError("model sizes are inconsistent");
    for (const auto& zl : m.z) {
      if (zl.size() != m.degrees.size())
        throw ValidationError("model term has the wrong number of dimensions");
      for (std::size_t i = 0; i < zl.size(); ++i)
        if (zl[i].size() != m.degrees[i] + 1)
          throw ValidationError("model coefficient vector has the wrong length");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
}

} // namespace patc
