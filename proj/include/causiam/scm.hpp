#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "causiam/errors.hpp"

namespace causiam {

using NodeSet = std::set<std::string>;

/// Directed acyclic graph with per-node observability flags.
struct ScmGraph {
    struct Node {
        std::string name;
        bool observable = true;
    };
    std::vector<Node> nodes;
    std::set<std::pair<int, int>> edges;  // (from, to) node indices

    int add_node(const std::string& name, bool observable = true);
    void add_edge(const std::string& from, const std::string& to);

    int index(const std::string& name) const;  // ParamError if unknown
    bool has_node(const std::string& name) const;
    bool observable(const std::string& name) const;
    int size() const { return static_cast<int>(nodes.size()); }

    std::vector<int> parents(int v) const;
    std::vector<int> children(int v) const;
    NodeSet ancestors(const NodeSet& of) const;    // excludes `of` itself
    NodeSet descendants(const NodeSet& of) const;  // excludes `of` itself
    NodeSet children_of(const std::string& name) const;

    /// ParamError if a directed cycle exists.
    void check_acyclic() const;

    bool operator==(const ScmGraph& o) const;
};

/// Copy of g with incoming edges to remove_in and outgoing edges from
/// remove_out deleted (the overline / underline mutilations).
ScmGraph mutilate(const ScmGraph& g, const NodeSet& remove_in, const NodeSet& remove_out);

/// Reachability-based d-separation test over disjoint sets.
bool d_separated(const ScmGraph& g, const NodeSet& x, const NodeSet& y, const NodeSet& z);

/// Exponential oracle: enumerates all simple undirected paths and applies the
/// chain/fork/collider blocking rules literally. Limited to 12 nodes.
bool d_sep_bruteforce(const ScmGraph& g, const NodeSet& x, const NodeSet& y, const NodeSet& z);

/// Minimal-cardinality set that d-separates x from y, ties broken by
/// lexicographic node names; nullopt if none exists.
std::optional<NodeSet> blocking_set(const ScmGraph& g, const NodeSet& x, const NodeSet& y,
                                    bool observable_only);

// ---------------- Symbolic interventional expressions ----------------

/// A value variable tied to a node; prime > 0 renders with apostrophes so a
/// bound summation copy can coexist with the query value ("x" vs "x'").
struct VarRef {
    std::string node;
    int prime = 0;

    std::string display() const;
    bool operator<(const VarRef& o) const {
        return node != o.node ? node < o.node : prime < o.prime;
    }
    bool operator==(const VarRef& o) const { return node == o.node && prime == o.prime; }
};

struct CausalExpr {
    enum class Kind { PROB, SUM, PRODUCT };
    Kind kind = Kind::PROB;
    std::vector<VarRef> targets, conds;  // PROB: P(targets | conds)
    std::vector<VarRef> bound;           // SUM binder
    std::vector<CausalExpr> children;    // SUM: one child; PRODUCT: factors

    static CausalExpr prob(std::vector<VarRef> targets, std::vector<VarRef> conds = {});
    static CausalExpr sum(std::vector<VarRef> bound, CausalExpr child);
    static CausalExpr product(std::vector<CausalExpr> factors);

    /// Canonical text form, e.g. "sum_{d,s,x'} P(y|d,s,x') P(d|x) P(s|x) P(x')".
    std::string render() const;

    /// True if any PROB term references the node.
    bool mentions(const std::string& node) const;
};

struct QueryResult {
    bool identified = false;
    int step = 5;  // which branch fired; 5 means FAIL
    CausalExpr expr;
    std::vector<std::string> trace;
};

/// Five-step identification of P(y|do(x)); observational closed form or FAIL.
/// Branches whose required sets contain latent nodes are skipped.
QueryResult closed_form(const ScmGraph& g, const std::string& x, const std::string& y);

/// Do-calculus rule premises:
///   rule 1: (Y ci Z | X,W) in G with incoming edges to X removed
///   rule 2: same graph with outgoing edges from Z also removed
///   rule 3: incoming edges to X and to Z(W) removed, where Z(W) is the set of
///           Z-nodes that are not ancestors of any W-node once X's incoming
///           edges are gone
bool rule_applicable(const ScmGraph& g, int rule, const NodeSet& x, const NodeSet& y,
                     const NodeSet& z, const NodeSet& w);

}  // namespace causiam
