#include "causiam/scm.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <functional>

namespace causiam {

int ScmGraph::add_node(const std::string& name, bool observable) {
    if (name.empty()) throw ParamError("node name must be non-empty");
    for (const Node& n : nodes)
        if (n.name == name) throw ParamError("duplicate node name: " + name);
    nodes.push_back({name, observable});
    return static_cast<int>(nodes.size()) - 1;
}

void ScmGraph::add_edge(const std::string& from, const std::string& to) {
    int a = index(from), b = index(to);
    if (a == b) throw ParamError("self loop on node: " + from);
    edges.insert({a, b});
}

int ScmGraph::index(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
        if (nodes[static_cast<std::size_t>(i)].name == name) return i;
    throw ParamError("unknown node: " + name);
}

bool ScmGraph::has_node(const std::string& name) const {
    for (const Node& n : nodes)
        if (n.name == name) return true;
    return false;
}

bool ScmGraph::observable(const std::string& name) const {
    return nodes[static_cast<std::size_t>(index(name))].observable;
}

std::vector<int> ScmGraph::parents(int v) const {
    std::vector<int> out;
    for (const auto& [a, b] : edges)
        if (b == v) out.push_back(a);
    return out;
}

std::vector<int> ScmGraph::children(int v) const {
    std::vector<int> out;
    for (const auto& [a, b] : edges)
        if (a == v) out.push_back(b);
    return out;
}

namespace {
NodeSet closure(const ScmGraph& g, const NodeSet& of, bool upward) {
    std::vector<bool> seen(static_cast<std::size_t>(g.size()), false);
    std::deque<int> q;
    for (const std::string& n : of) q.push_back(g.index(n));
    NodeSet out;
    while (!q.empty()) {
        int v = q.front();
        q.pop_front();
        for (int u : upward ? g.parents(v) : g.children(v))
            if (!seen[static_cast<std::size_t>(u)]) {
                seen[static_cast<std::size_t>(u)] = true;
                out.insert(g.nodes[static_cast<std::size_t>(u)].name);
                q.push_back(u);
            }
    }
    for (const std::string& n : of) out.erase(n);
    return out;
}
}  // namespace

NodeSet ScmGraph::ancestors(const NodeSet& of) const { return closure(*this, of, true); }
NodeSet ScmGraph::descendants(const NodeSet& of) const { return closure(*this, of, false); }

NodeSet ScmGraph::children_of(const std::string& name) const {
    NodeSet out;
    for (int c : children(index(name))) out.insert(nodes[static_cast<std::size_t>(c)].name);
    return out;
}

void ScmGraph::check_acyclic() const {
    std::vector<int> indeg(static_cast<std::size_t>(size()), 0);
    for (const auto& [a, b] : edges) ++indeg[static_cast<std::size_t>(b)];
    std::deque<int> q;
    for (int i = 0; i < size(); ++i)
        if (indeg[static_cast<std::size_t>(i)] == 0) q.push_back(i);
    int visited = 0;
    while (!q.empty()) {
        int v = q.front();
        q.pop_front();
        ++visited;
        for (int c : children(v))
            if (--indeg[static_cast<std::size_t>(c)] == 0) q.push_back(c);
    }
    if (visited != size()) throw ParamError("graph contains a directed cycle");
}

bool ScmGraph::operator==(const ScmGraph& o) const {
    if (edges != o.edges || nodes.size() != o.nodes.size()) return false;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].name != o.nodes[i].name || nodes[i].observable != o.nodes[i].observable)
            return false;
    return true;
}

ScmGraph mutilate(const ScmGraph& g, const NodeSet& remove_in, const NodeSet& remove_out) {
    std::set<int> in_idx, out_idx;
    for (const std::string& n : remove_in) in_idx.insert(g.index(n));
    for (const std::string& n : remove_out) out_idx.insert(g.index(n));
    ScmGraph out;
    out.nodes = g.nodes;
    for (const auto& [a, b] : g.edges)
        if (!in_idx.count(b) && !out_idx.count(a)) out.edges.insert({a, b});
    return out;
}

namespace {
void check_disjoint(const NodeSet& x, const NodeSet& y, const NodeSet& z) {
    for (const std::string& n : x)
        if (y.count(n) || z.count(n)) throw ParamError("query sets overlap at node: " + n);
    for (const std::string& n : y)
        if (z.count(n)) throw ParamError("query sets overlap at node: " + n);
}
}  // namespace

bool d_separated(const ScmGraph& g, const NodeSet& x, const NodeSet& y, const NodeSet& z) {
    check_disjoint(x, y, z);
    std::set<int> zi, yi;
    for (const std::string& n : z) zi.insert(g.index(n));
    for (const std::string& n : y) yi.insert(g.index(n));

    // Ball states: (node, 0=arrived from a child going up, 1=arrived from a
    // parent going down).
    const std::size_t n = static_cast<std::size_t>(g.size());
    std::vector<bool> seen_up(n, false), seen_down(n, false);
    std::deque<std::pair<int, int>> q;
    for (const std::string& s : x) q.push_back({g.index(s), 0});

    auto visit = [&](int v, int dir) {
        auto& seen = dir == 0 ? seen_up : seen_down;
        if (!seen[static_cast<std::size_t>(v)]) {
            seen[static_cast<std::size_t>(v)] = true;
            q.push_back({v, dir});
        }
    };

    bool reached = false;
    while (!q.empty() && !reached) {
        auto [v, dir] = q.front();
        q.pop_front();
        if (yi.count(v)) {
            reached = true;
            break;
        }
        bool in_z = zi.count(v) != 0;
        if (dir == 0) {  // moving up, arrived via one of v's outgoing edges
            if (!in_z) {
                for (int p : g.parents(v)) visit(p, 0);
                for (int c : g.children(v)) visit(c, 1);
            }
        } else {  // moving down, arrived via one of v's incoming edges
            if (in_z) {
                for (int p : g.parents(v)) visit(p, 0);  // collider bounce
            } else {
                for (int c : g.children(v)) visit(c, 1);
            }
        }
    }
    return !reached;
}

bool d_sep_bruteforce(const ScmGraph& g, const NodeSet& x, const NodeSet& y, const NodeSet& z) {
    check_disjoint(x, y, z);
    if (g.size() > 12) throw ParamError("d_sep_bruteforce: graph too large (> 12 nodes)");
    std::set<int> zi;
    for (const std::string& n : z) zi.insert(g.index(n));

    // Descendant closure per node including the node itself.
    std::vector<std::set<int>> desc(static_cast<std::size_t>(g.size()));
    for (int v = 0; v < g.size(); ++v) {
        std::deque<int> q{v};
        while (!q.empty()) {
            int u = q.front();
            q.pop_front();
            if (!desc[static_cast<std::size_t>(v)].insert(u).second) continue;
            for (int c : g.children(u)) q.push_back(c);
        }
    }
    auto collider_open = [&](int v) {
        for (int d : desc[static_cast<std::size_t>(v)])
            if (zi.count(d)) return true;
        return false;
    };

    // path holds node indices; dirs[i] is true when the edge between path[i]
    // and path[i+1] points forward (path[i] -> path[i+1]).
    std::vector<int> path;
    std::vector<bool> dirs;
    std::vector<bool> on_path(static_cast<std::size_t>(g.size()), false);
    std::set<int> targets;
    for (const std::string& n : y) targets.insert(g.index(n));

    bool found_active = false;
    std::function<void(int)> dfs = [&](int v) {
        if (found_active) return;
        if (targets.count(v) && path.size() >= 2) {
            // Classify each internal node; the path is active iff every
            // non-collider is outside Z and every collider is opened.
            bool active = true;
            for (std::size_t i = 1; i + 1 < path.size(); ++i) {
                int m = path[i];
                bool collider = dirs[i - 1] && !dirs[i];
                if (collider) {
                    if (!collider_open(m)) active = false;
                } else {
                    if (zi.count(m)) active = false;
                }
                if (!active) break;
            }
            if (active) found_active = true;
            return;
        }
        for (const auto& [a, b] : g.edges) {
            int next = -1;
            bool fwd = false;
            if (a == v) {
                next = b;
                fwd = true;
            } else if (b == v) {
                next = a;
                fwd = false;
            } else {
                continue;
            }
            if (on_path[static_cast<std::size_t>(next)]) continue;
            path.push_back(next);
            dirs.push_back(fwd);
            on_path[static_cast<std::size_t>(next)] = true;
            dfs(next);
            on_path[static_cast<std::size_t>(next)] = false;
            dirs.pop_back();
            path.pop_back();
            if (found_active) return;
        }
    };

    for (const std::string& s : x) {
        int v = g.index(s);
        if (targets.count(v)) throw ParamError("query sets overlap at node: " + s);
        path = {v};
        dirs.clear();
        std::fill(on_path.begin(), on_path.end(), false);
        on_path[static_cast<std::size_t>(v)] = true;
        dfs(v);
        if (found_active) return false;
    }
    return true;
}

namespace {
/// Enumerates subsets of `candidates` by cardinality, lexicographic within a
/// cardinality, returning the first satisfying `pred`.
std::optional<NodeSet> minimal_subset(const std::vector<std::string>& candidates,
                                      const std::function<bool(const NodeSet&)>& pred) {
    std::vector<std::string> sorted = candidates;
    std::sort(sorted.begin(), sorted.end());
    const int n = static_cast<int>(sorted.size());
    for (int k = 0; k <= n; ++k) {
        std::vector<int> pick(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) pick[static_cast<std::size_t>(i)] = i;
        while (true) {
            NodeSet s;
            for (int i : pick) s.insert(sorted[static_cast<std::size_t>(i)]);
            if (pred(s)) return s;
            if (k == 0) break;
            int i = k - 1;
            while (i >= 0 && pick[static_cast<std::size_t>(i)] == n - k + i) --i;
            if (i < 0) break;
            ++pick[static_cast<std::size_t>(i)];
            for (int j = i + 1; j < k; ++j)
                pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
        }
    }
    return std::nullopt;
}
}  // namespace

std::optional<NodeSet> blocking_set(const ScmGraph& g, const NodeSet& x, const NodeSet& y,
                                    bool observable_only) {
    for (const std::string& n : x)
        if (y.count(n)) throw ParamError("query sets overlap at node: " + n);
    std::vector<std::string> candidates;
    for (const ScmGraph::Node& n : g.nodes) {
        if (x.count(n.name) || y.count(n.name)) continue;
        if (observable_only && !n.observable) continue;
        candidates.push_back(n.name);
    }
    return minimal_subset(candidates,
                          [&](const NodeSet& s) { return d_separated(g, x, y, s); });
}

// ---------------- Symbolic expressions ----------------

std::string VarRef::display() const {
    std::string s;
    for (char c : node) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (int i = 0; i < prime; ++i) s += '\'';
    return s;
}

CausalExpr CausalExpr::prob(std::vector<VarRef> targets, std::vector<VarRef> conds) {
    CausalExpr e;
    e.kind = Kind::PROB;
    e.targets = std::move(targets);
    e.conds = std::move(conds);
    return e;
}

CausalExpr CausalExpr::sum(std::vector<VarRef> bound, CausalExpr child) {
    CausalExpr e;
    e.kind = Kind::SUM;
    e.bound = std::move(bound);
    e.children.push_back(std::move(child));
    return e;
}

CausalExpr CausalExpr::product(std::vector<CausalExpr> factors) {
    CausalExpr e;
    e.kind = Kind::PRODUCT;
    e.children = std::move(factors);
    return e;
}

namespace {
std::string join_vars(const std::vector<VarRef>& vs) {
    std::string out;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (i) out += ",";
        out += vs[i].display();
    }
    return out;
}
}  // namespace

std::string CausalExpr::render() const {
    switch (kind) {
        case Kind::PROB: {
            std::string s = "P(" + join_vars(targets);
            if (!conds.empty()) s += "|" + join_vars(conds);
            return s + ")";
        }
        case Kind::SUM:
            return "sum_{" + join_vars(bound) + "} " + children.front().render();
        case Kind::PRODUCT: {
            std::string s;
            for (std::size_t i = 0; i < children.size(); ++i) {
                if (i) s += " ";
                bool wrap = children[i].kind == Kind::SUM;
                s += wrap ? "(" + children[i].render() + ")" : children[i].render();
            }
            return s;
        }
    }
    return {};
}

bool CausalExpr::mentions(const std::string& node) const {
    if (kind == Kind::PROB) {
        for (const VarRef& v : targets)
            if (v.node == node) return true;
        for (const VarRef& v : conds)
            if (v.node == node) return true;
        return false;
    }
    for (const CausalExpr& c : children)
        if (c.mentions(node)) return true;
    return false;
}

// ---------------- ClosedForm ----------------

namespace {

std::vector<VarRef> to_vars(const NodeSet& s) {
    std::vector<VarRef> out;
    for (const std::string& n : s) out.push_back({n, 0});
    return out;
}

bool all_observable(const ScmGraph& g, const NodeSet& s) {
    for (const std::string& n : s)
        if (!g.observable(n)) return false;
    return true;
}

std::string set_str(const NodeSet& s) {
    std::string out = "{";
    bool first = true;
    for (const std::string& n : s) {
        if (!first) out += ",";
        out += n;
        first = false;
    }
    return out + "}";
}

struct IdentifyResult {
    bool ok = false;
    int step = 5;
    CausalExpr expr;
};

IdentifyResult identify(const ScmGraph& g, const std::string& x, const NodeSet& targets,
                        std::vector<std::string>& trace, int depth) {
    if (depth > 8) {
        trace.push_back("recursion limit reached");
        return {};
    }
    const NodeSet xs{x};
    ScmGraph g_no_in = mutilate(g, xs, {});
    ScmGraph g_no_out = mutilate(g, {}, xs);

    // Step 1: X independent of the targets once X's incoming edges are cut.
    if (d_separated(g_no_in, xs, targets, {})) {
        trace.push_back("step 1: X independent of " + set_str(targets) +
                        " with incoming edges to X removed");
        return {true, 1, CausalExpr::prob(to_vars(targets))};
    }
    trace.push_back("step 1: condition not met");

    // Step 2: no backdoor path at all.
    if (d_separated(g_no_out, xs, targets, {})) {
        trace.push_back("step 2: X independent of " + set_str(targets) +
                        " with outgoing edges from X removed");
        return {true, 2, CausalExpr::prob(to_vars(targets), {{x, 0}})};
    }
    trace.push_back("step 2: condition not met");

    // Step 3: observable blocking set B, identify P(B|do(x)) recursively,
    // return sum_b P(targets|b,x) * P(b|do(x)).
    if (auto b = blocking_set(g, xs, targets, true); b && !b->empty()) {
        std::vector<std::string> sub_trace;
        IdentifyResult pb = identify(g, x, *b, sub_trace, depth + 1);
        if (pb.ok) {
            trace.push_back("step 3: blocking set " + set_str(*b) +
                            " identified recursively (step " + std::to_string(pb.step) + ")");
            for (const std::string& t : sub_trace) trace.push_back("  " + t);
            std::vector<VarRef> conds = to_vars(*b);
            conds.push_back({x, 0});
            CausalExpr body = CausalExpr::product(
                {CausalExpr::prob(to_vars(targets), conds), std::move(pb.expr)});
            return {true, 3, CausalExpr::sum(to_vars(*b), std::move(body))};
        }
        trace.push_back("step 3: blocking set " + set_str(*b) + " but P(b|do(x)) unidentified");
    } else {
        trace.push_back("step 3: no observable blocking set");
    }

    // Step 4: front-door style. Z1 = Ch(X) restricted to targets and their
    // ancestors; Z3 blocks X from Z1 once X's outgoing edges are cut; Z4
    // blocks Z1 from the targets (given X) once Z1's outgoing edges are cut.
    NodeSet z1;
    {
        NodeSet rel = targets;
        for (const std::string& a : g.ancestors(targets)) rel.insert(a);
        for (const std::string& c : g.children_of(x))
            if (rel.count(c)) z1.insert(c);
    }
    bool step4_ok = !z1.empty() && all_observable(g, z1);
    for (const std::string& t : targets)
        if (z1.count(t)) step4_ok = false;
    std::optional<NodeSet> z3, z4;
    if (step4_ok) {
        // Z2 must not contain descendants of X or the query nodes themselves.
        std::vector<std::string> candidates;
        NodeSet de_x = g.descendants(xs);
        for (const ScmGraph::Node& n : g.nodes) {
            if (!n.observable || n.name == x) continue;
            if (z1.count(n.name) || targets.count(n.name) || de_x.count(n.name)) continue;
            candidates.push_back(n.name);
        }
        z3 = minimal_subset(candidates,
                            [&](const NodeSet& s) { return d_separated(g_no_out, xs, z1, s); });
        ScmGraph g_no_out_z1 = mutilate(g, {}, z1);
        z4 = minimal_subset(candidates, [&](const NodeSet& s) {
            NodeSet cond = s;
            cond.insert(x);
            return d_separated(g_no_out_z1, z1, targets, cond);
        });
        step4_ok = z3.has_value() && z4.has_value();
    }
    if (step4_ok) {
        NodeSet z2 = *z3;
        for (const std::string& n : *z4) z2.insert(n);
        trace.push_back("step 4: Z1=" + set_str(z1) + " Z2=" + set_str(z2));
        // sum_{z1,z2} sum_{x'} P(targets|z1,z2,x') P(x'|z2) P(z1|x,z2) P(z2)
        VarRef xp{x, 1};
        std::vector<VarRef> v1 = to_vars(z1), v2 = to_vars(z2);
        std::vector<VarRef> cond_y = v1;
        cond_y.insert(cond_y.end(), v2.begin(), v2.end());
        cond_y.push_back(xp);
        std::vector<VarRef> cond_z1{{x, 0}};
        cond_z1.insert(cond_z1.end(), v2.begin(), v2.end());
        std::vector<CausalExpr> factors;
        factors.push_back(CausalExpr::prob(to_vars(targets), cond_y));
        factors.push_back(CausalExpr::prob({xp}, v2));
        factors.push_back(CausalExpr::prob(v1, cond_z1));
        if (!v2.empty()) factors.push_back(CausalExpr::prob(v2));
        CausalExpr body = CausalExpr::product(std::move(factors));
        std::vector<VarRef> outer = v1;
        outer.insert(outer.end(), v2.begin(), v2.end());
        outer.push_back(xp);
        return {true, 4, CausalExpr::sum(std::move(outer), std::move(body))};
    }
    trace.push_back("step 4: condition not met");
    trace.push_back("step 5: FAIL");
    return {};
}

}  // namespace

QueryResult closed_form(const ScmGraph& g, const std::string& x, const std::string& y) {
    if (x == y) throw ParamError("closed_form: x and y must differ");
    if (!g.observable(x) || !g.observable(y))
        throw ParamError("closed_form: x and y must be observable");
    g.check_acyclic();
    QueryResult res;
    IdentifyResult r = identify(g, x, {y}, res.trace, 0);
    res.identified = r.ok;
    res.step = r.ok ? r.step : 5;
    if (r.ok) res.expr = std::move(r.expr);
    return res;
}

bool rule_applicable(const ScmGraph& g, int rule, const NodeSet& x, const NodeSet& y,
                     const NodeSet& z, const NodeSet& w) {
    for (const std::string& n : w)
        if (x.count(n) || y.count(n) || z.count(n))
            throw ParamError("query sets overlap at node: " + n);
    check_disjoint(x, y, z);
    NodeSet cond = w;
    for (const std::string& n : x) cond.insert(n);
    switch (rule) {
        case 1:
            return d_separated(mutilate(g, x, {}), y, z, cond);
        case 2:
            return d_separated(mutilate(g, x, z), y, z, cond);
        case 3: {
            ScmGraph g_no_x = mutilate(g, x, {});
            NodeSet an_w = g_no_x.ancestors(w);
            for (const std::string& n : w) an_w.insert(n);
            NodeSet zw;
            for (const std::string& n : z)
                if (!an_w.count(n)) zw.insert(n);
            return d_separated(mutilate(g_no_x, zw, {}), y, z, cond);
        }
        default:
            throw ParamError("rule must be 1, 2 or 3");
    }
}

}  // namespace causiam
