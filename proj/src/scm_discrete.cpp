#include "causiam/scm_discrete.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "causiam/rng.hpp"

namespace causiam {

namespace {

void for_each_assignment(const std::vector<int>& sizes,
                         const std::function<void(const std::vector<int>&)>& fn) {
    std::vector<int> a(sizes.size(), 0);
    while (true) {
        fn(a);
        int i = static_cast<int>(sizes.size()) - 1;
        while (i >= 0) {
            if (++a[static_cast<std::size_t>(i)] < sizes[static_cast<std::size_t>(i)]) break;
            a[static_cast<std::size_t>(i)] = 0;
            --i;
        }
        if (i < 0) break;
    }
}

std::size_t cpt_row(const DiscreteScm& m, int node, const std::vector<int>& assignment) {
    std::size_t row = 0;
    for (int p : m.parent_order[static_cast<std::size_t>(node)])
        row = row * static_cast<std::size_t>(m.domain_sizes[static_cast<std::size_t>(p)]) +
              static_cast<std::size_t>(assignment[static_cast<std::size_t>(p)]);
    return row;
}

double factor(const DiscreteScm& m, int node, const std::vector<int>& assignment) {
    std::size_t row = cpt_row(m, node, assignment);
    int k = m.domain_sizes[static_cast<std::size_t>(node)];
    return m.cpt[static_cast<std::size_t>(node)]
                [row * static_cast<std::size_t>(k) +
                 static_cast<std::size_t>(assignment[static_cast<std::size_t>(node)])];
}

/// Sums the (possibly intervened) joint over assignments consistent with
/// `fixed`; nodes in do_point get an indicator factor instead of their CPT.
double marginal(const DiscreteScm& m, const std::map<int, int>& fixed,
                const std::map<int, int>& do_point) {
    double total = 0.0;
    for_each_assignment(m.domain_sizes, [&](const std::vector<int>& a) {
        for (const auto& [v, val] : fixed)
            if (a[static_cast<std::size_t>(v)] != val) return;
        double p = 1.0;
        for (int v = 0; v < m.graph.size() && p != 0.0; ++v) {
            auto it = do_point.find(v);
            if (it != do_point.end())
                p *= a[static_cast<std::size_t>(v)] == it->second ? 1.0 : 0.0;
            else
                p *= factor(m, v, a);
        }
        total += p;
    });
    return total;
}

double cond(const DiscreteScm& m, const std::map<int, int>& targets,
            const std::map<int, int>& conds, const std::map<int, int>& do_point) {
    std::map<int, int> both = conds;
    for (const auto& [v, val] : targets) {
        if (both.count(v)) throw ParamError("target also appears in the conditioning set");
        both[v] = val;
    }
    double denom = marginal(m, conds, do_point);
    if (denom <= 0.0) throw NumericError("conditioning on a zero-probability event");
    return marginal(m, both, do_point) / denom;
}

}  // namespace

void DiscreteScm::validate() const {
    graph.check_acyclic();
    const std::size_t n = static_cast<std::size_t>(graph.size());
    if (domain_sizes.size() != n || parent_order.size() != n || cpt.size() != n ||
        labels.size() != n)
        throw ShapeError("DiscreteScm: per-node array sizes disagree");
    for (int v = 0; v < graph.size(); ++v) {
        std::size_t vi = static_cast<std::size_t>(v);
        int k = domain_sizes[vi];
        if (k < 2) throw ParamError("domain of " + graph.nodes[vi].name + " needs >= 2 values");
        if (labels[vi].size() != static_cast<std::size_t>(k))
            throw ShapeError("label count mismatch for " + graph.nodes[vi].name);
        std::vector<int> pa = graph.parents(v);
        if (pa.size() != parent_order[vi].size())
            throw ShapeError("CPT parent list mismatch for " + graph.nodes[vi].name);
        for (int p : parent_order[vi])
            if (std::find(pa.begin(), pa.end(), p) == pa.end())
                throw ShapeError("CPT parent list mismatch for " + graph.nodes[vi].name);
        std::size_t rows = 1;
        for (int p : parent_order[vi])
            rows *= static_cast<std::size_t>(domain_sizes[static_cast<std::size_t>(p)]);
        if (cpt[vi].size() != rows * static_cast<std::size_t>(k))
            throw ShapeError("CPT size mismatch for " + graph.nodes[vi].name);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (int val = 0; val < k; ++val) {
                double p = cpt[vi][r * static_cast<std::size_t>(k) + static_cast<std::size_t>(val)];
                if (p < 0.0 || p > 1.0)
                    throw ParamError("CPT entry outside [0,1] for " + graph.nodes[vi].name);
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-12)
                throw ParamError("CPT row does not sum to 1 for " + graph.nodes[vi].name);
        }
    }
}

std::vector<double> DiscreteScm::joint() const {
    std::size_t total = 1;
    for (int k : domain_sizes) total *= static_cast<std::size_t>(k);
    std::vector<double> out;
    out.reserve(total);
    for_each_assignment(domain_sizes, [&](const std::vector<int>& a) {
        double p = 1.0;
        for (int v = 0; v < graph.size(); ++v) p *= factor(*this, v, a);
        out.push_back(p);
    });
    return out;
}

double DiscreteScm::cond_prob(const std::map<int, int>& targets,
                              const std::map<int, int>& conds) const {
    return cond(*this, targets, conds, {});
}

DiscreteScm random_discrete_scm(const ScmGraph& g, std::uint64_t seed, int domain_size) {
    if (domain_size < 2) throw ParamError("domain_size must be >= 2");
    g.check_acyclic();
    DiscreteScm m;
    m.graph = g;
    Rng rng(seed);
    for (int v = 0; v < g.size(); ++v) {
        m.domain_sizes.push_back(domain_size);
        std::vector<std::string> lab;
        for (int i = 0; i < domain_size; ++i) lab.push_back(std::to_string(i));
        m.labels.push_back(std::move(lab));
        m.parent_order.push_back(g.parents(v));
        std::size_t rows = 1;
        for (std::size_t i = 0; i < m.parent_order.back().size(); ++i)
            rows *= static_cast<std::size_t>(domain_size);
        std::vector<double> table(rows * static_cast<std::size_t>(domain_size));
        for (std::size_t r = 0; r < rows; ++r) {
            double sum = 0.0;
            for (int k = 0; k < domain_size; ++k) {
                double w = rng.uniform(0.05, 0.95);
                table[r * static_cast<std::size_t>(domain_size) + static_cast<std::size_t>(k)] = w;
                sum += w;
            }
            for (int k = 0; k < domain_size; ++k)
                table[r * static_cast<std::size_t>(domain_size) + static_cast<std::size_t>(k)] /= sum;
        }
        m.cpt.push_back(std::move(table));
    }
    m.validate();
    return m;
}

double interventional_prob(const DiscreteScm& m, const std::map<std::string, int>& do_assign,
                           const std::map<std::string, int>& targets,
                           const std::map<std::string, int>& conds) {
    std::map<int, int> dp, tg, cd;
    for (const auto& [n, v] : do_assign) {
        int i = m.graph.index(n);
        if (v < 0 || v >= m.domain_sizes[static_cast<std::size_t>(i)])
            throw ParamError("value outside domain of " + n);
        dp[i] = v;
    }
    for (const auto& [n, v] : targets) {
        int i = m.graph.index(n);
        if (dp.count(i)) throw ParamError("query node is intervened: " + n);
        if (v < 0 || v >= m.domain_sizes[static_cast<std::size_t>(i)])
            throw ParamError("value outside domain of " + n);
        tg[i] = v;
    }
    for (const auto& [n, v] : conds) {
        int i = m.graph.index(n);
        if (v < 0 || v >= m.domain_sizes[static_cast<std::size_t>(i)])
            throw ParamError("value outside domain of " + n);
        cd[i] = v;
    }
    return cond(m, tg, cd, dp);
}

// ---------------- Expression evaluation ----------------

double eval_expr(const DiscreteScm& m, const CausalExpr& e,
                 const std::map<std::string, int>& env) {
    switch (e.kind) {
        case CausalExpr::Kind::PROB: {
            std::map<int, int> tg, cd;
            auto bind = [&](const VarRef& v, std::map<int, int>& out) {
                int i = m.graph.index(v.node);
                if (!m.graph.nodes[static_cast<std::size_t>(i)].observable)
                    throw StateError("expression references latent node " + v.node);
                auto it = env.find(v.display());
                if (it == env.end()) throw ParamError("unbound variable " + v.display());
                out[i] = it->second;
            };
            for (const VarRef& v : e.targets) bind(v, tg);
            for (const VarRef& v : e.conds) bind(v, cd);
            return m.cond_prob(tg, cd);
        }
        case CausalExpr::Kind::SUM: {
            double total = 0.0;
            std::function<void(std::size_t, std::map<std::string, int>&)> rec =
                [&](std::size_t i, std::map<std::string, int>& env2) {
                    if (i == e.bound.size()) {
                        total += eval_expr(m, e.children.front(), env2);
                        return;
                    }
                    const VarRef& v = e.bound[i];
                    int k = m.domain_sizes[static_cast<std::size_t>(m.graph.index(v.node))];
                    for (int val = 0; val < k; ++val) {
                        env2[v.display()] = val;
                        rec(i + 1, env2);
                    }
                    env2.erase(v.display());
                };
            std::map<std::string, int> env2 = env;
            rec(0, env2);
            return total;
        }
        case CausalExpr::Kind::PRODUCT: {
            double p = 1.0;
            for (const CausalExpr& c : e.children) p *= eval_expr(m, c, env);
            return p;
        }
    }
    throw StateError("corrupt expression node");
}

// ---------------- Derivation certification ----------------

ScmGraph two_mediator_graph(bool s_latent) {
    ScmGraph g;
    g.add_node("X");
    g.add_node("Y");
    g.add_node("D");
    g.add_node("S", !s_latent);
    g.add_node("K_D", false);
    g.add_node("K_S", false);
    g.add_edge("K_D", "X");
    g.add_edge("K_S", "X");
    g.add_edge("K_D", "Y");
    g.add_edge("K_S", "Y");
    g.add_edge("X", "D");
    g.add_edge("X", "S");
    g.add_edge("D", "Y");
    g.add_edge("S", "Y");
    return g;
}

DerivationReport verify_derivation(const DiscreteScm& m) {
    m.validate();
    const ScmGraph base = two_mediator_graph(false);
    for (const ScmGraph::Node& n : base.nodes)
        if (!m.graph.has_node(n.name))
            throw ParamError("verify_derivation: graph lacks node " + n.name);
    for (const auto& [a, b] : base.edges) {
        int ia = m.graph.index(base.nodes[static_cast<std::size_t>(a)].name);
        int ib = m.graph.index(base.nodes[static_cast<std::size_t>(b)].name);
        if (!m.graph.edges.count({ia, ib}))
            throw ParamError("verify_derivation: graph lacks a required edge");
    }

    auto dom = [&](const char* n) { return m.domain_sizes[static_cast<std::size_t>(m.graph.index(n))]; };
    const int nx = dom("X"), ny = dom("Y"), ns = dom("S"), nd = dom("D");

    using Assign = std::map<std::string, int>;
    auto hat = [&](const Assign& d, const Assign& t, const Assign& c) {
        return interventional_prob(m, d, t, c);
    };
    auto obs = [&](const Assign& t, const Assign& c) { return interventional_prob(m, {}, t, c); };

    DerivationReport rep;
    auto check = [&](const std::string& name, const std::function<void(double&)>& body) {
        DerivationCheck c{name, 0.0, false};
        body(c.max_err);
        c.pass = c.max_err <= 1e-10;
        rep.checks.push_back(c);
    };
    auto upd = [](double& m_err, double a, double b) {
        double e = std::abs(a - b);
        if (e > m_err) m_err = e;
    };

    check("expand_s", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int y = 0; y < ny; ++y) {
                double rhs = 0.0;
                for (int s = 0; s < ns; ++s)
                    rhs += hat({{"X", x}}, {{"Y", y}}, {{"S", s}}) * hat({{"X", x}}, {{"S", s}}, {});
                upd(err, hat({{"X", x}}, {{"Y", y}}, {}), rhs);
            }
    });
    check("expand_sd", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int y = 0; y < ny; ++y) {
                double rhs = 0.0;
                for (int s = 0; s < ns; ++s)
                    for (int d = 0; d < nd; ++d)
                        rhs += hat({{"X", x}}, {{"Y", y}}, {{"S", s}, {"D", d}}) *
                               hat({{"X", x}}, {{"D", d}}, {{"S", s}}) *
                               hat({{"X", x}}, {{"S", s}}, {});
                upd(err, hat({{"X", x}}, {{"Y", y}}, {}), rhs);
            }
    });
    check("y_swap_s", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int s = 0; s < ns; ++s)
                for (int d = 0; d < nd; ++d)
                    for (int y = 0; y < ny; ++y)
                        upd(err, hat({{"X", x}}, {{"Y", y}}, {{"S", s}, {"D", d}}),
                            hat({{"X", x}, {"S", s}}, {{"Y", y}}, {{"D", d}}));
    });
    check("y_swap_d", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int s = 0; s < ns; ++s)
                for (int d = 0; d < nd; ++d)
                    for (int y = 0; y < ny; ++y)
                        upd(err, hat({{"X", x}, {"S", s}}, {{"Y", y}}, {{"D", d}}),
                            hat({{"X", x}, {"S", s}, {"D", d}}, {{"Y", y}}, {}));
    });
    check("y_drop_xhat", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int s = 0; s < ns; ++s)
                for (int d = 0; d < nd; ++d)
                    for (int y = 0; y < ny; ++y)
                        upd(err, hat({{"X", x}, {"S", s}, {"D", d}}, {{"Y", y}}, {}),
                            hat({{"S", s}, {"D", d}}, {{"Y", y}}, {}));
    });
    check("y_expand_x", [&](double& err) {
        for (int s = 0; s < ns; ++s)
            for (int d = 0; d < nd; ++d)
                for (int y = 0; y < ny; ++y) {
                    double rhs = 0.0;
                    for (int x = 0; x < nx; ++x)
                        rhs += hat({{"S", s}, {"D", d}}, {{"Y", y}}, {{"X", x}}) *
                               hat({{"S", s}, {"D", d}}, {{"X", x}}, {});
                    upd(err, hat({{"S", s}, {"D", d}}, {{"Y", y}}, {}), rhs);
                }
    });
    check("y_unhat_s", [&](double& err) {
        for (int s = 0; s < ns; ++s)
            for (int d = 0; d < nd; ++d)
                for (int x = 0; x < nx; ++x)
                    for (int y = 0; y < ny; ++y)
                        upd(err, hat({{"S", s}, {"D", d}}, {{"Y", y}}, {{"X", x}}),
                            hat({{"D", d}}, {{"Y", y}}, {{"X", x}, {"S", s}}));
    });
    check("y_unhat_d", [&](double& err) {
        for (int s = 0; s < ns; ++s)
            for (int d = 0; d < nd; ++d)
                for (int x = 0; x < nx; ++x)
                    for (int y = 0; y < ny; ++y)
                        upd(err, hat({{"D", d}}, {{"Y", y}}, {{"X", x}, {"S", s}}),
                            obs({{"Y", y}}, {{"X", x}, {"S", s}, {"D", d}}));
    });
    check("x_drop_shat", [&](double& err) {
        for (int s = 0; s < ns; ++s)
            for (int d = 0; d < nd; ++d)
                for (int x = 0; x < nx; ++x)
                    upd(err, hat({{"S", s}, {"D", d}}, {{"X", x}}, {}),
                        hat({{"D", d}}, {{"X", x}}, {}));
    });
    check("x_drop_dhat", [&](double& err) {
        for (int d = 0; d < nd; ++d)
            for (int x = 0; x < nx; ++x)
                upd(err, hat({{"D", d}}, {{"X", x}}, {}), obs({{"X", x}}, {}));
    });
    check("y_observational", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int s = 0; s < ns; ++s)
                for (int d = 0; d < nd; ++d)
                    for (int y = 0; y < ny; ++y) {
                        double rhs = 0.0;
                        for (int xp = 0; xp < nx; ++xp)
                            rhs += obs({{"Y", y}}, {{"S", s}, {"D", d}, {"X", xp}}) *
                                   obs({{"X", xp}}, {});
                        upd(err, hat({{"X", x}}, {{"Y", y}}, {{"S", s}, {"D", d}}), rhs);
                    }
    });
    check("d_swap_x", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int s = 0; s < ns; ++s)
                for (int d = 0; d < nd; ++d)
                    upd(err, hat({{"X", x}}, {{"D", d}}, {{"S", s}}),
                        obs({{"D", d}}, {{"X", x}, {"S", s}}));
    });
    check("d_drop_s", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int s = 0; s < ns; ++s)
                for (int d = 0; d < nd; ++d)
                    upd(err, obs({{"D", d}}, {{"X", x}, {"S", s}}), obs({{"D", d}}, {{"X", x}}));
    });
    check("s_swap_x", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int s = 0; s < ns; ++s)
                upd(err, hat({{"X", x}}, {{"S", s}}, {}), obs({{"S", s}}, {{"X", x}}));
    });
    check("assembly", [&](double& err) {
        for (int x = 0; x < nx; ++x)
            for (int y = 0; y < ny; ++y) {
                double rhs = 0.0;
                for (int s = 0; s < ns; ++s)
                    for (int d = 0; d < nd; ++d)
                        for (int xp = 0; xp < nx; ++xp)
                            rhs += obs({{"Y", y}}, {{"S", s}, {"D", d}, {"X", xp}}) *
                                   obs({{"X", xp}}, {}) * obs({{"D", d}}, {{"X", x}}) *
                                   obs({{"S", s}}, {{"X", x}});
                upd(err, hat({{"X", x}}, {{"Y", y}}, {}), rhs);
            }
    });

    rep.all_pass = true;
    for (const DerivationCheck& c : rep.checks) rep.all_pass = rep.all_pass && c.pass;
    return rep;
}

// ---------------- DSL parser ----------------

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string t;
    while (in >> t) out.push_back(t);
    return out;
}

[[noreturn]] void fail(int line, const std::string& msg) {
    throw FormatError("scm parse error at line " + std::to_string(line) + ": " + msg);
}

}  // namespace

DiscreteScm parse_scm_text(const std::string& text) {
    DiscreteScm m;
    std::map<std::string, std::vector<std::string>> domains;
    struct CptDecl {
        int line;
        std::vector<std::string> parents;
        std::vector<double> values;
    };
    std::map<std::string, CptDecl> cpts;

    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
        line = trim(line);
        if (line.empty()) continue;
        std::vector<std::string> tok = split_ws(line);
        const std::string& kw = tok[0];
        try {
            if (kw == "node") {
                if (tok.size() < 2 || tok.size() > 3) fail(line_no, "expected: node <name> [latent]");
                bool latent = tok.size() == 3;
                if (latent && tok[2] != "latent") fail(line_no, "unknown node attribute " + tok[2]);
                m.graph.add_node(tok[1], !latent);
            } else if (kw == "edge") {
                if (tok.size() != 4 || tok[2] != "->") fail(line_no, "expected: edge <a> -> <b>");
                m.graph.add_edge(tok[1], tok[3]);
            } else if (kw == "domain") {
                auto eq = line.find('=');
                if (eq == std::string::npos) fail(line_no, "expected: domain <name> = v1,v2,...");
                std::vector<std::string> lhs = split_ws(trim(line.substr(6, eq - 6)));
                if (lhs.size() != 1) fail(line_no, "expected one node name before '='");
                m.graph.index(lhs[0]);
                std::vector<std::string> vals;
                std::string rest = line.substr(eq + 1);
                std::istringstream vs(rest);
                std::string v;
                while (std::getline(vs, v, ',')) {
                    v = trim(v);
                    if (!v.empty()) vals.push_back(v);
                }
                if (vals.size() < 2) fail(line_no, "domain needs at least two values");
                domains[lhs[0]] = vals;
            } else if (kw == "cpt") {
                auto colon = line.find(':');
                if (colon == std::string::npos) fail(line_no, "expected ':' before probabilities");
                std::string head = trim(line.substr(3, colon - 3));
                std::string parents_part;
                if (auto bar = head.find('|'); bar != std::string::npos) {
                    parents_part = head.substr(bar + 1);
                    head = trim(head.substr(0, bar));
                }
                std::vector<std::string> name_tok = split_ws(head);
                if (name_tok.size() != 1) fail(line_no, "expected one node name");
                m.graph.index(name_tok[0]);
                CptDecl decl;
                decl.line = line_no;
                decl.parents = split_ws(parents_part);
                std::string nums = line.substr(colon + 1);
                for (char& c : nums)
                    if (c == ',' || c == ';') c = ' ';
                std::istringstream ns(nums);
                double p;
                while (ns >> p) decl.values.push_back(p);
                if (!ns.eof()) fail(line_no, "malformed probability value");
                if (decl.values.empty()) fail(line_no, "CPT has no probabilities");
                cpts[name_tok[0]] = std::move(decl);
            } else {
                fail(line_no, "unknown statement '" + kw + "'");
            }
        } catch (const ParamError& e) {
            fail(line_no, e.what());
        }
    }

    m.graph.check_acyclic();
    for (int v = 0; v < m.graph.size(); ++v) {
        const std::string& name = m.graph.nodes[static_cast<std::size_t>(v)].name;
        auto it = domains.find(name);
        if (it == domains.end()) {
            m.domain_sizes.push_back(2);
            m.labels.push_back({"0", "1"});
        } else {
            m.domain_sizes.push_back(static_cast<int>(it->second.size()));
            m.labels.push_back(it->second);
        }
    }

    if (!cpts.empty()) {
        if (static_cast<int>(cpts.size()) != m.graph.size())
            throw FormatError("scm parse error: CPTs given for some nodes but not all");
        for (int v = 0; v < m.graph.size(); ++v) {
            const std::string& name = m.graph.nodes[static_cast<std::size_t>(v)].name;
            const CptDecl& decl = cpts.at(name);
            std::vector<int> order;
            for (const std::string& p : decl.parents) order.push_back(m.graph.index(p));
            m.parent_order.push_back(order);
            m.cpt.push_back(decl.values);
        }
        m.validate();
    }
    return m;
}

DiscreteScm load_scm(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open scm file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_scm_text(ss.str());
}

}  // namespace causiam
