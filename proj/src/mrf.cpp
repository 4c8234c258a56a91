#include "mmreg/mrf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace mmreg {

void MrfInstance::validate() const {
    if (num_nodes == 0 || num_labels == 0) throw Error(ErrorKind::Structural, "MRF needs at least one node and label");
    if (unaries.size() != num_nodes * num_labels) throw Error(ErrorKind::Structural, "MRF unary table has the wrong size");
    if (pairwise_table.size() != num_labels * num_labels) {
        throw Error(ErrorKind::Structural, "MRF pairwise table has the wrong size");
    }
    if (edge_weights.size() != edges.size()) throw Error(ErrorKind::Structural, "MRF needs one weight per edge");
    for (const auto& e : edges) {
        if (e.a >= num_nodes || e.b >= num_nodes || e.a == e.b) {
            throw Error(ErrorKind::Structural, "MRF edge references an invalid node");
        }
    }
}

double MrfInstance::energy(std::span<const int> labels) const {
    if (labels.size() != num_nodes) throw Error(ErrorKind::Structural, "labeling length does not match the MRF");
    double e = 0.0;
    for (std::size_t i = 0; i < num_nodes; ++i) e += unary(i, static_cast<std::size_t>(labels[i]));
    for (std::size_t k = 0; k < edges.size(); ++k) {
        e += edge_weights[k] * table(static_cast<std::size_t>(labels[edges[k].a]), static_cast<std::size_t>(labels[edges[k].b]));
    }
    return e;
}

std::vector<double> l1_pairwise_table(const LabelSpace& labels) {
    const std::size_t n = labels.size();
    std::vector<double> t(n * n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) t[a * n + b] = (labels[a] - labels[b]).l1();
    }
    return t;
}

std::optional<LabelLattice> detect_lattice(const LabelSpace& labels) {
    LabelLattice lat;
    std::vector<double> values[3];
    std::size_t cells = 1;
    for (int a = 0; a < 3; ++a) {
        for (const auto& d : labels.displacements()) values[a].push_back(d[a]);
        std::sort(values[a].begin(), values[a].end());
        values[a].erase(std::unique(values[a].begin(), values[a].end()), values[a].end());
        const auto& v = values[a];
        lat.k[a] = static_cast<int>(v.size());
        cells *= v.size();
        if (v.size() < 2) continue;
        lat.step[a] = (v.back() - v.front()) / static_cast<double>(v.size() - 1);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double expect = v.front() + static_cast<double>(i) * lat.step[a];
            if (std::abs(v[i] - expect) > 1e-9 * std::max(1.0, std::abs(v.back() - v.front()))) return std::nullopt;
        }
    }
    if (cells != labels.size()) return std::nullopt;
    std::vector<char> seen(cells, 0);
    for (const auto& d : labels.displacements()) {
        int idx[3];
        for (int a = 0; a < 3; ++a) {
            idx[a] = static_cast<int>(std::lower_bound(values[a].begin(), values[a].end(), d[a]) - values[a].begin());
        }
        const int c = idx[0] + lat.k[0] * (idx[1] + lat.k[1] * idx[2]);
        if (seen[static_cast<std::size_t>(c)]) return std::nullopt;
        seen[static_cast<std::size_t>(c)] = 1;
        lat.cell.push_back(c);
    }
    return lat;
}

MrfInstance make_instance(std::vector<double> unaries, const ControlGrid& grid, const LabelSpace& labels,
                          double pairwise_weight) {
    MrfInstance m;
    m.num_nodes = grid.size();
    m.num_labels = labels.size();
    m.unaries = std::move(unaries);
    m.edges = grid.edges();
    m.edge_weights.assign(m.edges.size(), pairwise_weight);
    m.pairwise_table = l1_pairwise_table(labels);
    m.lattice = detect_lattice(labels);
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------

MaxFlow::MaxFlow(std::size_t nodes)
    : n_(nodes + 2), source_(nodes), sink_(nodes + 1), adj_(nodes + 2), level_(nodes + 2), it_(nodes + 2),
      reachable_(nodes + 2, 0) {}

void MaxFlow::add_edge(std::size_t from, std::size_t to, double cap) {
    if (!(cap > 0.0)) return;
    adj_[from].push_back({to, adj_[to].size(), cap});
    adj_[to].push_back({from, adj_[from].size() - 1, 0.0});
}

void MaxFlow::add_terminal(std::size_t node, double source_cap, double sink_cap) {
    // Flow through s->node->t can be pushed straight away.
    const double common = std::min(source_cap, sink_cap);
    add_edge(source_, node, source_cap - common);
    add_edge(node, sink_, sink_cap - common);
}

namespace {
constexpr double kFlowEps = 1e-12;
}

bool MaxFlow::bfs() {
    std::fill(level_.begin(), level_.end(), -1);
    std::queue<std::size_t> q;
    level_[source_] = 0;
    q.push(source_);
    while (!q.empty()) {
        const std::size_t v = q.front();
        q.pop();
        for (const Arc& a : adj_[v]) {
            if (a.cap > kFlowEps && level_[a.to] < 0) {
                level_[a.to] = level_[v] + 1;
                q.push(a.to);
            }
        }
    }
    return level_[sink_] >= 0;
}

double MaxFlow::dfs(std::size_t v, double pushed) {
    if (v == sink_) return pushed;
    for (std::size_t& i = it_[v]; i < adj_[v].size(); ++i) {
        Arc& a = adj_[v][i];
        if (a.cap <= kFlowEps || level_[a.to] != level_[v] + 1) continue;
        const double got = dfs(a.to, std::min(pushed, a.cap));
        if (got > 0.0) {
            a.cap -= got;
            adj_[a.to][a.rev].cap += got;
            return got;
        }
    }
    return 0.0;
}

double MaxFlow::solve() {
    double flow = 0.0;
    while (bfs()) {
        std::fill(it_.begin(), it_.end(), 0);
        while (true) {
            const double f = dfs(source_, std::numeric_limits<double>::infinity());
            if (f <= 0.0) break;
            flow += f;
        }
    }
    // Residual reachability from the source defines the cut.
    std::fill(reachable_.begin(), reachable_.end(), 0);
    std::queue<std::size_t> q;
    reachable_[source_] = 1;
    q.push(source_);
    while (!q.empty()) {
        const std::size_t v = q.front();
        q.pop();
        for (const Arc& a : adj_[v]) {
            if (a.cap > kFlowEps && !reachable_[a.to]) {
                reachable_[a.to] = 1;
                q.push(a.to);
            }
        }
    }
    return flow;
}

// ---------------------------------------------------------------------------

namespace {

Labeling expansion_move(const MrfInstance& m, const Labeling& current, int alpha) {
    const std::size_t n = m.num_nodes;
    const auto al = static_cast<std::size_t>(alpha);
    std::vector<double> coef(n);
    for (std::size_t p = 0; p < n; ++p) {
        coef[p] = m.unary(p, al) - m.unary(p, static_cast<std::size_t>(current[p]));
    }
    MaxFlow g(n);
    for (std::size_t k = 0; k < m.edges.size(); ++k) {
        const double w = m.edge_weights[k];
        if (w == 0.0) continue;
        const std::size_t p = m.edges[k].a;
        const std::size_t q = m.edges[k].b;
        const auto a = static_cast<std::size_t>(current[p]);
        const auto b = static_cast<std::size_t>(current[q]);
        // x = 1 means "switch to alpha".
        const double e00 = w * m.table(a, b);
        const double e01 = w * m.table(a, al);
        const double e10 = w * m.table(al, b);
        const double e11 = w * m.table(al, al);
        coef[p] += e10 - e00;
        coef[q] += e11 - e10;
        g.add_edge(p, q, std::max(0.0, e01 + e10 - e00 - e11));
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (coef[p] > 0.0) {
            g.add_terminal(p, coef[p], 0.0);
        } else {
            g.add_terminal(p, 0.0, -coef[p]);
        }
    }
    g.solve();
    Labeling next = current;
    for (std::size_t p = 0; p < n; ++p) {
        if (!g.source_side(p)) next[p] = alpha;
    }
    return next;
}

bool improves(double candidate, double current) {
    return candidate < current - 1e-12 * std::max(1.0, std::abs(current));
}

// Greedy single-node descent to a labeling no single-node change can improve.
void polish(const MrfInstance& m, Labeling& labels) {
    std::vector<std::vector<std::pair<std::size_t, double>>> adj(m.num_nodes);
    for (std::size_t k = 0; k < m.edges.size(); ++k) {
        adj[m.edges[k].a].emplace_back(m.edges[k].b, m.edge_weights[k]);
        adj[m.edges[k].b].emplace_back(m.edges[k].a, m.edge_weights[k]);
    }
    auto local = [&](std::size_t p, std::size_t l) {
        double e = m.unary(p, l);
        for (const auto& [q, w] : adj[p]) e += w * m.table(l, static_cast<std::size_t>(labels[q]));
        return e;
    };
    bool changed = true;
    for (int sweep = 0; changed && sweep < 1000; ++sweep) {
        changed = false;
        for (std::size_t p = 0; p < m.num_nodes; ++p) {
            const double here = local(p, static_cast<std::size_t>(labels[p]));
            std::size_t best = static_cast<std::size_t>(labels[p]);
            double best_e = here;
            for (std::size_t l = 0; l < m.num_labels; ++l) {
                const double e = local(p, l);
                if (e < best_e) {
                    best_e = e;
                    best = l;
                }
            }
            if (improves(best_e, here)) {
                labels[p] = static_cast<int>(best);
                changed = true;
            }
        }
    }
}

}  // namespace

namespace {

double expand(const MrfInstance& instance, Labeling& labels, int max_cycles) {
    double energy = instance.energy(labels);
    for (int cycle = 0; cycle < max_cycles; ++cycle) {
        bool changed = false;
        for (std::size_t alpha = 0; alpha < instance.num_labels; ++alpha) {
            Labeling next = expansion_move(instance, labels, static_cast<int>(alpha));
            const double e = instance.energy(next);
            if (improves(e, energy)) {
                labels = std::move(next);
                energy = e;
                changed = true;
            }
        }
        if (!changed) break;
    }
    polish(instance, labels);
    return instance.energy(labels);
}

// out(b) = min_a h(a) + w * table(a, b)
void min_convolve(const MrfInstance& m, double w, std::span<const double> h, std::span<double> out,
                  std::vector<double>& scratch) {
    const std::size_t L = m.num_labels;
    if (!m.lattice) {
        for (std::size_t b = 0; b < L; ++b) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < L; ++a) best = std::min(best, h[a] + w * m.table(a, b));
            out[b] = best;
        }
        return;
    }
    const LabelLattice& lat = *m.lattice;
    scratch.resize(L);
    for (std::size_t l = 0; l < L; ++l) scratch[static_cast<std::size_t>(lat.cell[l])] = h[l];
    const std::size_t stride[3] = {1, static_cast<std::size_t>(lat.k[0]), static_cast<std::size_t>(lat.k[0]) * lat.k[1]};
    for (int a = 0; a < 3; ++a) {
        const auto n = static_cast<std::size_t>(lat.k[a]);
        if (n < 2) continue;
        const double c = w * lat.step[a];
        const std::size_t st = stride[a];
        for (std::size_t start = 0; start < L; ++start) {
            if ((start / st) % n != 0) continue;  // first cell of a line along axis a
            for (std::size_t i = 1; i < n; ++i) {
                double& cur = scratch[start + i * st];
                cur = std::min(cur, scratch[start + (i - 1) * st] + c);
            }
            for (std::size_t i = n - 1; i-- > 0;) {
                double& cur = scratch[start + i * st];
                cur = std::min(cur, scratch[start + (i + 1) * st] + c);
            }
        }
    }
    for (std::size_t l = 0; l < L; ++l) out[l] = scratch[static_cast<std::size_t>(lat.cell[l])];
}

}  // namespace

Labeling solve_messages(const MrfInstance& m, int iterations) {
    m.validate();
    const std::size_t V = m.num_nodes;
    const std::size_t L = m.num_labels;
    struct Link {
        std::size_t other;
        std::size_t edge;
        std::size_t in;   // offset of the message other -> this
        std::size_t out;  // offset of the message this -> other
    };
    std::vector<std::vector<Link>> links(V);
    for (std::size_t e = 0; e < m.edges.size(); ++e) {
        const std::size_t a = m.edges[e].a, b = m.edges[e].b;
        links[a].push_back({b, e, (2 * e + 1) * L, 2 * e * L});
        links[b].push_back({a, e, 2 * e * L, (2 * e + 1) * L});
    }
    std::vector<double> gamma(V, 1.0);
    for (std::size_t p = 0; p < V; ++p) {
        std::size_t before = 0, after = 0;
        for (const auto& k : links[p]) (k.other < p ? before : after)++;
        gamma[p] = 1.0 / static_cast<double>(std::max<std::size_t>({before, after, 1}));
    }
    std::vector<double> msg(2 * m.edges.size() * L, 0.0);
    std::vector<double> belief(L), h(L), out(L), scratch;

    auto update = [&](std::size_t p, bool forward) {
        for (std::size_t l = 0; l < L; ++l) belief[l] = m.unary(p, l);
        for (const auto& k : links[p]) {
            for (std::size_t l = 0; l < L; ++l) belief[l] += msg[k.in + l];
        }
        double change = 0.0;
        for (const auto& k : links[p]) {
            if ((k.other > p) != forward) continue;
            for (std::size_t l = 0; l < L; ++l) h[l] = gamma[p] * belief[l] - msg[k.in + l];
            min_convolve(m, m.edge_weights[k.edge], h, out, scratch);
            const double lo = *std::min_element(out.begin(), out.end());
            for (std::size_t l = 0; l < L; ++l) {
                const double v = out[l] - lo;
                change = std::max(change, std::abs(v - msg[k.out + l]));
                msg[k.out + l] = v;
            }
        }
        return change;
    };
    for (int it = 0; it < iterations; ++it) {
        double change = 0.0;
        for (std::size_t p = 0; p < V; ++p) change = std::max(change, update(p, true));
        for (std::size_t p = V; p-- > 0;) change = std::max(change, update(p, false));
        if (change < 1e-10) break;
    }

    // Sequential decoding: earlier nodes enter through their chosen labels.
    Labeling labels(V, 0);
    for (std::size_t p = 0; p < V; ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < L; ++l) {
            double c = m.unary(p, l);
            for (const auto& k : links[p]) {
                c += k.other < p ? m.edge_weights[k.edge] * m.table(l, static_cast<std::size_t>(labels[k.other]))
                                 : msg[k.in + l];
            }
            if (c < best) {
                best = c;
                labels[p] = static_cast<int>(l);
            }
        }
    }
    return labels;
}

Labeling solve(const MrfInstance& instance, const SolverOptions& options) {
    Labeling warm = solve_messages(instance, options.message_iterations);
    const double warm_e = expand(instance, warm, options.max_cycles);
    Labeling zero(instance.num_nodes, 0);
    if (warm == zero) return warm;
    const double zero_e = expand(instance, zero, options.max_cycles);
    return improves(zero_e, warm_e) ? zero : warm;
}

Labeling solve_bruteforce(const MrfInstance& instance) {
    instance.validate();
    const double total = std::pow(static_cast<double>(instance.num_labels), static_cast<double>(instance.num_nodes));
    if (total > 1e7) throw Error(ErrorKind::Input, "instance too large for exhaustive enumeration");
    Labeling labels(instance.num_nodes, 0);
    Labeling best = labels;
    double best_e = instance.energy(labels);
    const int L = static_cast<int>(instance.num_labels);
    while (true) {
        // Odometer with the last node fastest enumerates in lexicographic order.
        std::size_t pos = instance.num_nodes;
        while (pos > 0) {
            --pos;
            if (++labels[pos] < L) break;
            labels[pos] = 0;
            if (pos == 0) return best;
        }
        const double e = instance.energy(labels);
        if (e < best_e) {
            best_e = e;
            best = labels;
        }
    }
}

}  // namespace mmreg
