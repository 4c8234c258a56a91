#include "mmreg/learn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mmreg/io.hpp"
#include "mmreg/parallel.hpp"

namespace mmreg {

namespace {

// Per-axis tile index of every voxel coordinate.
std::vector<int> axis_tiles(const ControlGrid& grid, const Geometry& geo, int axis) {
    std::vector<int> out(static_cast<std::size_t>(geo.dims[axis]));
    for (int v = 0; v < geo.dims[axis]; ++v) {
        const double mm = geo.origin[axis] + v * geo.spacing[axis];
        const double t = (mm - grid.origin()[axis]) / grid.spacing()[axis];
        out[static_cast<std::size_t>(v)] = std::clamp(static_cast<int>(std::floor(t + 0.5)), 0, grid.dims()[axis] - 1);
    }
    return out;
}

// Nearest source voxel for x + d along one axis, -1 outside (same rounding as warp_mask).
std::vector<int> axis_shift(int n, double shift_voxels) {
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
        const long s = std::lround(v + shift_voxels);
        out[static_cast<std::size_t>(v)] = s < 0 || s >= n ? -1 : static_cast<int>(s);
    }
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void check_weights(const TrainingSample& sample, const std::vector<double>& w) {
    if (w.size() != sample.features.metrics + 1) {
        throw Error(ErrorKind::Structural, "weight vector needs " + std::to_string(sample.features.metrics + 1) +
                                               " entries, got " + std::to_string(w.size()));
    }
}

void check_sample(const TrainingSet& set, const TrainingSample& sample) {
    if (sample.features.nodes != set.grid.size() || sample.features.labels != set.labels.size() ||
        sample.loss.nodes != set.grid.size() || sample.loss.labels != set.labels.size()) {
        throw Error(ErrorKind::Structural, "training sample '" + sample.name + "' does not match the grid and labels");
    }
}

void add_increments(MrfInstance& m, const std::vector<double>& inc) {
    for (std::size_t i = 0; i < inc.size(); ++i) m.unaries[i] += inc[i];
}

}  // namespace

LossTable loss_table(const SegmentationMask& source, const SegmentationMask& target, const ControlGrid& grid,
                     const LabelSpace& labels) {
    if (!(source.geometry() == target.geometry())) {
        throw Error(ErrorKind::Structural, "loss masks must share one lattice");
    }
    const Geometry& geo = target.geometry();
    LossTable t;
    t.nodes = grid.size();
    t.labels = labels.size();
    t.overlap.assign(t.nodes * t.labels, 0);
    t.denom.assign(t.nodes * t.labels, 0);

    const auto tx = axis_tiles(grid, geo, 0), ty = axis_tiles(grid, geo, 1), tz = axis_tiles(grid, geo, 2);
    const Dims& n = geo.dims;
    std::vector<std::int64_t> target_count(t.nodes, 0);
    for (int z = 0; z < n.z; ++z) {
        for (int y = 0; y < n.y; ++y) {
            for (int x = 0; x < n.x; ++x) {
                if (target(x, y, z)) ++target_count[grid.node_id(tx[x], ty[y], tz[z])];
            }
        }
    }
    const bool source_empty = std::all_of(source.values().begin(), source.values().end(), [](auto v) { return v == 0; });

    for (std::size_t l = 0; l < t.labels; ++l) {
        const Vec3& d = labels[l];
        const auto sx = axis_shift(n.x, d.x / geo.spacing.x);
        const auto sy = axis_shift(n.y, d.y / geo.spacing.y);
        const auto sz = axis_shift(n.z, d.z / geo.spacing.z);
        std::vector<std::int64_t> src(t.nodes, 0), both(t.nodes, 0);
        if (!source_empty) {
            for (int z = 0; z < n.z; ++z) {
                if (sz[z] < 0) continue;
                for (int y = 0; y < n.y; ++y) {
                    if (sy[y] < 0) continue;
                    for (int x = 0; x < n.x; ++x) {
                        if (sx[x] < 0 || !source(sx[x], sy[y], sz[z])) continue;
                        const std::size_t node = grid.node_id(tx[x], ty[y], tz[z]);
                        ++src[node];
                        if (target(x, y, z)) ++both[node];
                    }
                }
            }
        }
        for (std::size_t i = 0; i < t.nodes; ++i) {
            t.overlap[i * t.labels + l] = both[i];
            t.denom[i * t.labels + l] = src[i] + target_count[i];
        }
    }
    for (std::size_t i = 0; i < t.nodes; ++i) t.denom_zero += t.denom[i * t.labels];
    return t;
}

double dice_loss(const SegmentationMask& a, const SegmentationMask& b, const ControlGrid& grid) {
    const LossTable t = loss_table(a, b, grid, LabelSpace({Vec3{}}));
    return tile_loss(t, Labeling(t.nodes, 0));
}

double tile_loss(const LossTable& table, const Labeling& labeling) {
    std::int64_t num = 0, den = 0;
    for (std::size_t i = 0; i < table.nodes; ++i) {
        const auto l = static_cast<std::size_t>(labeling[i]);
        num += table.overlap_at(i, l);
        den += table.denom_at(i, l);
    }
    if (den == 0) return 0.0;
    return 1.0 - 2.0 * static_cast<double>(num) / static_cast<double>(den);
}

double separable_loss(const LossTable& table, const Labeling& labeling) {
    if (table.denom_zero == 0) return 0.0;
    std::int64_t num = 0;
    for (std::size_t i = 0; i < table.nodes; ++i) num += table.overlap_at(i, static_cast<std::size_t>(labeling[i]));
    return static_cast<double>(table.denom_zero - 2 * num) / static_cast<double>(table.denom_zero);
}

std::vector<double> loss_to_unary_increments(const LossTable& table, double sign, double scale) {
    std::vector<double> out(table.nodes * table.labels, 0.0);
    if (table.denom_zero == 0 || scale == 0.0) return out;
    const double k = sign * scale / static_cast<double>(table.denom_zero);
    for (std::size_t i = 0; i < table.nodes; ++i) {
        const auto base = static_cast<double>(table.denom_at(i, 0));
        for (std::size_t l = 0; l < table.labels; ++l) {
            out[i * table.labels + l] = k * (base - 2.0 * static_cast<double>(table.overlap_at(i, l)));
        }
    }
    return out;
}

std::vector<double> loss_to_unary_increments(const SegmentationMask& source, const SegmentationMask& target,
                                             const ControlGrid& grid, const LabelSpace& labels, double sign,
                                             double scale) {
    return loss_to_unary_increments(loss_table(source, target, grid, labels), sign, scale);
}

JointFeature joint_feature(const TrainingSet& set, const TrainingSample& sample, const Labeling& labeling) {
    check_sample(set, sample);
    if (labeling.size() != set.grid.size()) throw Error(ErrorKind::Structural, "labeling length does not match the grid");
    const std::size_t n = sample.features.metrics;
    JointFeature psi(n + 1, 0.0);
    for (std::size_t i = 0; i < labeling.size(); ++i) {
        const auto f = sample.features.at(i, static_cast<std::size_t>(labeling[i]));
        for (std::size_t j = 0; j < n; ++j) psi[j] += f[j];
    }
    for (const Edge& e : set.grid.edges()) {
        psi[n] += (set.labels[static_cast<std::size_t>(labeling[e.a])] - set.labels[static_cast<std::size_t>(labeling[e.b])]).l1();
    }
    for (double& v : psi) v *= set.feature_scale;
    return psi;
}

double linear_energy(const std::vector<double>& w, const JointFeature& psi) {
    if (w.size() != psi.size()) throw Error(ErrorKind::Structural, "weight and feature lengths differ");
    return dot(w, psi);
}

MrfInstance class_instance(const TrainingSet& set, const TrainingSample& sample, const std::vector<double>& w) {
    check_sample(set, sample);
    check_weights(sample, w);
    const std::size_t n = sample.features.metrics;
    std::vector<double> column(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(n));
    for (double& v : column) v *= set.feature_scale;
    std::vector<double> unaries(sample.features.nodes * sample.features.labels);
    for (std::size_t i = 0; i < sample.features.nodes; ++i) {
        for (std::size_t l = 0; l < sample.features.labels; ++l) {
            unaries[i * sample.features.labels + l] = aggregated_unary(sample.features.at(i, l), column);
        }
    }
    return make_instance(std::move(unaries), set.grid, set.labels, w[n] * set.feature_scale);
}

void TrainConfig::validate(std::size_t metrics) const {
    if (!(C > 0.0)) throw Error(ErrorKind::Config, "train.C must be > 0");
    if (!(alpha >= 0.0)) throw Error(ErrorKind::Config, "train.alpha must be >= 0");
    if (!(eta > 0.0)) throw Error(ErrorKind::Config, "train.eta must be > 0");
    if (!(epsilon > 0.0)) throw Error(ErrorKind::Config, "train.epsilon must be > 0");
    if (!(slack_tolerance >= 0.0)) throw Error(ErrorKind::Config, "train.slack_tolerance must be >= 0");
    if (!(wp0 >= 0.0)) throw Error(ErrorKind::Config, "train.wp0 must be >= 0");
    if (max_outer < 1 || max_inner < 1 || qp_max_iterations < 1) {
        throw Error(ErrorKind::Config, "train iteration caps must be >= 1");
    }
    if (!(qp_tolerance > 0.0)) throw Error(ErrorKind::Config, "train.qp_tolerance must be > 0");
    if (w0.size() != metrics) {
        throw Error(ErrorKind::Config, "train.w0 has " + std::to_string(w0.size()) + " entries for " +
                                           std::to_string(metrics) + " metrics");
    }
    for (double v : w0) {
        if (!std::isfinite(v)) throw Error(ErrorKind::Config, "train.w0 entries must be finite");
    }
}

std::vector<double> TrainConfig::initial() const {
    std::vector<double> w = w0;
    w.push_back(wp0);
    return w;
}

MrfInstance impute_instance(const TrainingSet& set, const TrainingSample& sample, const std::vector<double>& w,
                            const TrainConfig& config) {
    MrfInstance m = class_instance(set, sample, w);
    add_increments(m, loss_to_unary_increments(sample.loss, 1.0, config.eta));
    return m;
}

Labeling impute_latent(const TrainingSet& set, const TrainingSample& sample, const std::vector<double>& w,
                       const TrainConfig& config) {
    return solve(impute_instance(set, sample, w, config), config.solver);
}

MrfInstance most_violated_instance(const TrainingSet& set, const TrainingSample& sample,
                                   const std::vector<double>& w) {
    MrfInstance m = class_instance(set, sample, w);
    add_increments(m, loss_to_unary_increments(sample.loss, -1.0, 1.0));
    return m;
}

double constraint_slack(const Constraint& c, const std::vector<double>& w, const JointFeature& imputed_psi,
                        double offset) {
    return c.loss - linear_energy(w, c.psi) + linear_energy(w, imputed_psi) + offset;
}

Constraint most_violated(const TrainingSet& set, const TrainingSample& sample, const std::vector<double>& w,
                         const TrainConfig& config, const JointFeature* imputed_psi,
                         const std::vector<Constraint>* working_set, double offset) {
    Constraint c;
    c.labeling = solve(most_violated_instance(set, sample, w), config.solver);
    c.psi = joint_feature(set, sample, c.labeling);
    c.loss = tile_loss(sample.loss, c.labeling);
    if (imputed_psi && working_set) {
        double best = constraint_slack(c, w, *imputed_psi, offset);
        for (const Constraint& s : *working_set) {
            const double v = constraint_slack(s, w, *imputed_psi, offset);
            if (v > best) {
                best = v;
                c = s;
            }
        }
    }
    return c;
}

namespace {

// Solves A x = b in place by Gaussian elimination with partial pivoting.
bool solve_dense(std::vector<double>& A, std::vector<double>& b, std::size_t n) {
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::abs(A[r * n + c]) > std::abs(A[piv * n + c])) piv = r;
        }
        if (!(std::abs(A[piv * n + c]) > 0.0)) return false;
        if (piv != c) {
            for (std::size_t k = 0; k < n; ++k) std::swap(A[c * n + k], A[piv * n + k]);
            std::swap(b[c], b[piv]);
        }
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = A[r * n + c] / A[c * n + c];
            if (f == 0.0) continue;
            for (std::size_t k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
            b[r] -= f * b[c];
        }
    }
    for (std::size_t c = n; c-- > 0;) {
        double v = b[c];
        for (std::size_t k = c + 1; k < n; ++k) v -= A[c * n + k] * b[k];
        b[c] = v / A[c * n + c];
    }
    return true;
}

}  // namespace

QpResult solve_qp(const std::vector<std::vector<Constraint>>& working_sets,
                  const std::vector<JointFeature>& imputed_psis, const std::vector<double>& w0, double C,
                  double alpha, const std::vector<double>& offsets, int max_iterations, double tolerance) {
    const std::size_t N = working_sets.size();
    const std::size_t d = w0.size();
    if (imputed_psis.size() != N) throw Error(ErrorKind::Structural, "one imputed feature per sample is required");
    if (!offsets.empty() && offsets.size() != N) throw Error(ErrorKind::Structural, "one offset per sample is required");
    if (d == 0) throw Error(ErrorKind::Structural, "empty weight vector");
    if (!(C > 0.0) || !(alpha >= 0.0)) throw Error(ErrorKind::Config, "QP needs C > 0 and alpha >= 0");

    // Constraint k of sample s: b_k + w^T a_k <= xi_s.
    std::vector<std::vector<double>> a;
    std::vector<double> b;
    std::vector<std::size_t> owner;
    for (std::size_t s = 0; s < N; ++s) {
        if (imputed_psis[s].size() != d) throw Error(ErrorKind::Structural, "imputed feature length differs from w0");
        for (const Constraint& c : working_sets[s]) {
            if (c.psi.size() != d) throw Error(ErrorKind::Structural, "constraint feature length differs from w0");
            std::vector<double> row(d);
            for (std::size_t j = 0; j < d; ++j) row[j] = imputed_psis[s][j] - c.psi[j];
            a.push_back(std::move(row));
            b.push_back(c.loss + (offsets.empty() ? 0.0 : offsets[s]));
            owner.push_back(s);
        }
    }
    const std::size_t K = a.size();
    const double beta = 1.0 + 2.0 * alpha;
    const double cap = N ? C / static_cast<double>(N) : 0.0;

    auto slacks_at = [&](const std::vector<double>& w) {
        std::vector<double> xi(N, 0.0);
        for (std::size_t k = 0; k < K; ++k) xi[owner[k]] = std::max(xi[owner[k]], b[k] + dot(a[k], w));
        return xi;
    };
    auto primal = [&](const std::vector<double>& w, const std::vector<double>& xi) {
        double reg = 0.0, prox = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            reg += w[j] * w[j];
            prox += (w[j] - w0[j]) * (w[j] - w0[j]);
        }
        return 0.5 * reg + alpha * prox + cap * std::accumulate(xi.begin(), xi.end(), 0.0);
    };

    QpResult r;
    r.w.resize(d);
    for (std::size_t j = 0; j < d; ++j) r.w[j] = 2.0 * alpha * w0[j] / beta;
    r.w[d - 1] = std::max(r.w[d - 1], 0.0);
    r.slacks = slacks_at(r.w);
    r.objective = primal(r.w, r.slacks);
    if (K == 0) return r;

    // Primal-dual interior point on x = (w, xi):
    //   min 1/2 x^T Q x + c^T x  s.t.  G x <= h
    // with rows a_k^T w - xi_s <= -b_k, -xi_s <= 0, -w_p <= 0.
    const std::size_t n = d + N;
    const std::size_t m = K + N + 1;
    std::vector<double> c(n, 0.0);
    for (std::size_t j = 0; j < d; ++j) c[j] = -2.0 * alpha * w0[j];
    for (std::size_t s = 0; s < N; ++s) c[d + s] = cap;
    // Sparse rows: (column, value) pairs.
    std::vector<std::vector<std::pair<std::size_t, double>>> G(m);
    std::vector<double> h(m, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < d; ++j) G[k].emplace_back(j, a[k][j]);
        G[k].emplace_back(d + owner[k], -1.0);
        h[k] = -b[k];
    }
    for (std::size_t s = 0; s < N; ++s) G[K + s].emplace_back(d + s, -1.0);
    G[K + N].emplace_back(d - 1, -1.0);

    auto row_dot = [&](std::size_t i, const std::vector<double>& x) {
        double v = 0.0;
        for (const auto& [j, g] : G[i]) v += g * x[j];
        return v;
    };

    std::vector<double> x(n, 0.0);
    for (std::size_t j = 0; j < d; ++j) x[j] = r.w[j];
    for (std::size_t s = 0; s < N; ++s) x[d + s] = r.slacks[s];
    std::vector<double> sl(m), z(m, 1.0);
    for (std::size_t i = 0; i < m; ++i) sl[i] = std::max(h[i] - row_dot(i, x), 1.0);

    double scale = 1.0;
    for (double v : b) scale = std::max(scale, std::abs(v));
    for (double v : c) scale = std::max(scale, std::abs(v));

    std::vector<double> rd(n), rp(m), M(n * n), rhs(n), dx(n), dz(m), ds(m);
    r.converged = false;
    for (int it = 1; it <= max_iterations; ++it) {
        // Residuals.
        for (std::size_t j = 0; j < n; ++j) rd[j] = (j < d ? beta * x[j] : 0.0) + c[j];
        for (std::size_t i = 0; i < m; ++i) {
            for (const auto& [j, g] : G[i]) rd[j] += g * z[i];
            rp[i] = row_dot(i, x) + sl[i] - h[i];
        }
        double mu = 0.0;
        for (std::size_t i = 0; i < m; ++i) mu += sl[i] * z[i];
        mu /= static_cast<double>(m);
        double res = 0.0;
        for (double v : rd) res = std::max(res, std::abs(v));
        for (double v : rp) res = std::max(res, std::abs(v));
        r.iterations = it;
        if (res <= tolerance * scale && mu <= tolerance * tolerance * scale) {
            r.converged = true;
            break;
        }
        const double sigma = 0.1;
        // (Q + G^T W G) dx = -rd - G^T S^-1 (-rc + Z rp), rc = s z - sigma mu.
        std::fill(M.begin(), M.end(), 0.0);
        for (std::size_t j = 0; j < d; ++j) M[j * n + j] = beta;
        for (std::size_t j = 0; j < n; ++j) rhs[j] = -rd[j];
        for (std::size_t i = 0; i < m; ++i) {
            const double wgt = z[i] / sl[i];
            const double t = (-(sl[i] * z[i] - sigma * mu) + z[i] * rp[i]) / sl[i];
            for (const auto& [j, g] : G[i]) {
                rhs[j] -= g * t;
                for (const auto& [k2, g2] : G[i]) M[j * n + k2] += wgt * g * g2;
            }
        }
        dx = rhs;
        if (!solve_dense(M, dx, n)) break;
        for (std::size_t i = 0; i < m; ++i) {
            const double gdx = row_dot(i, dx);
            ds[i] = -rp[i] - gdx;
            dz[i] = (-(sl[i] * z[i] - sigma * mu) - z[i] * ds[i]) / sl[i];
        }
        double step = 1.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (ds[i] < 0.0) step = std::min(step, -0.99 * sl[i] / ds[i]);
            if (dz[i] < 0.0) step = std::min(step, -0.99 * z[i] / dz[i]);
        }
        for (std::size_t j = 0; j < n; ++j) x[j] += step * dx[j];
        for (std::size_t i = 0; i < m; ++i) {
            sl[i] += step * ds[i];
            z[i] += step * dz[i];
        }
    }
    std::vector<double> w(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d));
    w[d - 1] = std::max(w[d - 1], 0.0);
    const auto xi = slacks_at(w);
    r.w = w;
    r.slacks = xi;
    r.objective = primal(w, xi);
    // Dual bound from the multipliers, scaled into {lambda >= 0, sum_s lambda <= C/N}.
    std::vector<double> lambda(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(K)), mass(N, 0.0);
    for (std::size_t k = 0; k < K; ++k) mass[owner[k]] += std::max(lambda[k], 0.0);
    std::vector<double> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = 2.0 * alpha * w0[j];
    double dual = alpha * dot(w0, w0);
    for (std::size_t k = 0; k < K; ++k) {
        const double l = std::max(lambda[k], 0.0) * (mass[owner[k]] > cap ? cap / mass[owner[k]] : 1.0);
        dual += l * b[k];
        for (std::size_t j = 0; j < d; ++j) v[j] -= l * a[k][j];
    }
    v[d - 1] = std::max(v[d - 1], 0.0);
    dual -= 0.5 * dot(v, v) / beta;
    r.gap = r.objective - dual;
    return r;
}

ClassResult train_class(const TrainingSet& set, int class_id, const TrainConfig& config) {
    if (set.samples.empty()) throw Error(ErrorKind::Input, "class " + std::to_string(class_id) + " has no training samples");
    const std::size_t n = set.samples.front().features.metrics;
    config.validate(n);
    for (const auto& s : set.samples) check_sample(set, s);

    const std::size_t N = set.samples.size();
    const std::vector<double> w0 = config.initial();
    std::vector<double> w = w0;
    ClassResult result;
    result.class_id = class_id;

    std::vector<Labeling> latents;
    double prev_objective = std::numeric_limits<double>::infinity();
    double best_objective = prev_objective;
    std::vector<double> best_w = w;
    bool done = false;

    auto latent_score = [&](std::size_t s, const Labeling& l, const std::vector<double>& wt) {
        return linear_energy(wt, joint_feature(set, set.samples[s], l)) + config.eta * tile_loss(set.samples[s].loss, l);
    };

    for (int iter = 1; iter <= config.max_outer && !done; ++iter) {
        std::vector<Labeling> fresh(N);
        parallel_for(N, config.threads, [&](std::size_t s) { fresh[s] = impute_latent(set, set.samples[s], w, config); });
        if (!latents.empty()) {
            for (std::size_t s = 0; s < N; ++s) {
                if (latent_score(s, latents[s], w) < latent_score(s, fresh[s], w)) fresh[s] = latents[s];
            }
            if (fresh == latents) break;
        }
        latents = std::move(fresh);

        std::vector<JointFeature> psi_hat(N);
        std::vector<double> offsets(N), latent_losses(N);
        for (std::size_t s = 0; s < N; ++s) {
            psi_hat[s] = joint_feature(set, set.samples[s], latents[s]);
            latent_losses[s] = tile_loss(set.samples[s].loss, latents[s]);
            offsets[s] = config.eta * latent_losses[s];
        }

        std::vector<std::vector<Constraint>> ws(N);
        std::vector<double> xi(N, 0.0);
        std::vector<double> wi = w;
        QpResult qp;
        bool solved = false, added = true;
        int rounds = 0;
        bool qp_ok = true;
        double violation = 0.0;
        while (added && rounds < config.max_inner) {
            ++rounds;
            std::vector<Constraint> cand(N);
            parallel_for(N, config.threads, [&](std::size_t s) {
                cand[s] = most_violated(set, set.samples[s], wi, config, &psi_hat[s], &ws[s], offsets[s]);
            });
            added = false;
            for (std::size_t s = 0; s < N; ++s) {
                if (constraint_slack(cand[s], wi, psi_hat[s], offsets[s]) <= xi[s] + config.slack_tolerance) continue;
                const bool dup = std::any_of(ws[s].begin(), ws[s].end(),
                                             [&](const Constraint& c) { return c.labeling == cand[s].labeling; });
                if (dup) continue;
                ws[s].push_back(std::move(cand[s]));
                added = true;
            }
            if (added || !solved) {
                qp = solve_qp(ws, psi_hat, w0, config.C, config.alpha, offsets, config.qp_max_iterations,
                              config.qp_tolerance);
                qp_ok = qp_ok && qp.converged;
                wi = qp.w;
                xi = qp.slacks;
                solved = true;
                for (std::size_t s = 0; s < N; ++s) {
                    violation = std::max(violation, -xi[s]);
                    for (const auto& c : ws[s]) {
                        violation = std::max(violation, constraint_slack(c, wi, psi_hat[s], offsets[s]) - xi[s]);
                    }
                }
                violation = std::max(violation, -wi.back());
            }
        }
        if (added) {
            result.converged = false;
            result.warnings.push_back("cutting plane hit its round cap at CCCP iteration " + std::to_string(iter));
        }
        if (!qp_ok) {
            result.converged = false;
            result.warnings.push_back("QP hit its iteration cap at CCCP iteration " + std::to_string(iter));
        }

        CccpIteration h;
        h.iteration = iter;
        h.objective = qp.objective;
        h.w = wi;
        h.slacks = xi;
        for (const auto& s : ws) h.working_set_sizes.push_back(s.size());
        h.latent_losses = latent_losses;
        h.cutting_plane_rounds = rounds;
        h.qp_converged = qp_ok;
        h.max_violation = violation;
        result.history.push_back(h);

        w = wi;
        if (qp.objective < best_objective) {
            best_objective = qp.objective;
            best_w = wi;
        }
        if (std::isfinite(prev_objective) &&
            prev_objective - qp.objective < config.epsilon * std::max(1.0, std::abs(prev_objective))) {
            done = true;
        }
        prev_objective = qp.objective;
        if (!done && iter == config.max_outer) {
            result.converged = false;
            result.warnings.push_back("CCCP hit its iteration cap of " + std::to_string(config.max_outer));
            w = best_w;
        }
    }
    result.w.assign(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(n));
    result.wp = w[n];
    return result;
}

WeightMatrix assemble_model(std::vector<ClassResult> results, const std::vector<MetricId>& metrics) {
    if (results.empty()) throw Error(ErrorKind::Input, "no class results to assemble");
    std::sort(results.begin(), results.end(), [](const auto& x, const auto& y) { return x.class_id < y.class_id; });
    std::vector<int> ids;
    std::vector<std::vector<double>> columns;
    std::vector<double> pairwise;
    for (const auto& r : results) {
        if (!ids.empty() && ids.back() == r.class_id) {
            throw Error(ErrorKind::Input, "class " + std::to_string(r.class_id) + " appears twice");
        }
        ids.push_back(r.class_id);
        columns.push_back(r.w);
        pairwise.push_back(r.wp);
    }
    return WeightMatrix(metrics, std::move(ids), std::move(columns), std::move(pairwise));
}

std::string format_training_log(const std::vector<ClassResult>& results) {
    auto join = [](const auto& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ';';
            if constexpr (std::is_floating_point_v<std::decay_t<decltype(v[i])>>) {
                s += format_number(v[i]);
            } else {
                s += std::to_string(v[i]);
            }
        }
        return s;
    };
    std::ostringstream ss;
    for (const auto& r : results) {
        ss << "class=" << r.class_id << " converged=" << (r.converged ? 1 : 0) << " w=" << join(r.w)
           << " wp=" << format_number(r.wp) << '\n';
        for (const auto& w : r.warnings) ss << "warning: " << w << '\n';
        ss << "cccp_iter objective rounds slacks working_set latent_loss w\n";
        for (const auto& h : r.history) {
            ss << h.iteration << ' ' << format_number(h.objective) << ' ' << h.cutting_plane_rounds << ' '
               << join(h.slacks) << ' ' << join(h.working_set_sizes) << ' ' << join(h.latent_losses) << ' '
               << join(h.w) << '\n';
        }
    }
    return ss.str();
}

PreparedTraining prepare_training(const std::vector<LoadedPair>& pairs, const std::vector<std::string>& names,
                                  const std::vector<MetricId>& metrics, const MetricSettings& settings,
                                  const PyramidConfig& pyramid, int threads) {
    pyramid.validate();
    if (pairs.empty()) throw Error(ErrorKind::Input, "training needs at least one pair");
    if (names.size() != pairs.size()) throw Error(ErrorKind::Structural, "one name per training pair is required");
    const Geometry& geo = pairs.front().target.geometry();
    for (const auto& p : pairs) {
        if (!(p.source.geometry() == geo) || !(p.target.geometry() == geo)) {
            throw Error(ErrorKind::Input, "training pairs must share one lattice");
        }
    }
    const double spacing = pyramid.finest_spacing_mm;
    const Vec3 sp{spacing, spacing, spacing};
    const auto grid = ControlGrid::covering(geo, sp);
    const Index3 extent = patch_extent(sp, geo.spacing);
    const LabelSpace labels = initialize_label_space(pyramid.labels_per_level, sp, pyramid.bound_factor);

    MetricRegistry registry(metrics, settings);
    std::vector<std::vector<double>> pooled(metrics.size());
    for (const auto& p : pairs) {
        const auto raw = zero_label_raw_values(p.source, p.target, grid, registry, extent);
        for (std::size_t j = 0; j < raw.size(); ++j) pooled[j].insert(pooled[j].end(), raw[j].begin(), raw[j].end());
    }
    PreparedTraining out;
    out.scales = percentile_scales(pooled);
    registry = registry.with_scales(out.scales);

    std::vector<int> ids;
    for (const auto& p : pairs) {
        for (int c : mask_classes(p.source_mask)) ids.push_back(c);
        for (int c : mask_classes(p.target_mask)) ids.push_back(c);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    std::vector<FeatureTensor> features(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        features[k] = compute_features(pairs[k].source, pairs[k].target, grid, labels, registry, extent, threads);
    }
    for (int c : ids) {
        TrainingSet set{grid, labels, {}, 1.0 / static_cast<double>(grid.size())};
        std::vector<std::string> skipped;
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const auto a = binary_mask(pairs[k].source_mask, c);
            const auto b = binary_mask(pairs[k].target_mask, c);
            const auto has = [](const SegmentationMask& m) {
                return std::any_of(m.values().begin(), m.values().end(), [](auto v) { return v != 0; });
            };
            if (!has(a) || !has(b)) {
                skipped.push_back(names[k]);
                continue;
            }
            set.samples.push_back({names[k], features[k], loss_table(a, b, grid, labels)});
        }
        if (set.samples.empty()) continue;
        out.class_ids.push_back(c);
        out.sets.push_back(std::move(set));
        out.skipped.push_back(std::move(skipped));
    }
    return out;
}

TrainedModel train_model(const PreparedTraining& prepared, const std::vector<MetricId>& metrics,
                         const TrainConfig& config) {
    config.validate(metrics.size());
    ClassResult background;
    background.class_id = 0;
    background.w = config.w0;
    background.wp = config.wp0;
    std::vector<ClassResult> results;
    std::vector<ClassResult> columns{background};
    bool converged = true;
    for (std::size_t k = 0; k < prepared.sets.size(); ++k) {
        if (prepared.class_ids[k] == 0) continue;
        results.push_back(train_class(prepared.sets[k], prepared.class_ids[k], config));
        converged = converged && results.back().converged;
        columns.push_back(results.back());
    }
    Model model{assemble_model(std::move(columns), metrics),
                prepared.scales,
                {{"train.C", format_number(config.C)},
                 {"train.alpha", format_number(config.alpha)},
                 {"train.eta", format_number(config.eta)},
                 {"train.wp0", format_number(config.wp0)}}};
    return {std::move(model), std::move(results), converged};
}

}  // namespace mmreg
