#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "causiam/scm.hpp"

namespace causiam {

/// Finite-domain SCM: the graph plus one conditional probability table per
/// node. CPT rows are indexed by the parent assignment (parents in the stored
/// order, last parent fastest) and hold one probability per node value.
struct DiscreteScm {
    ScmGraph graph;
    std::vector<int> domain_sizes;                // per node index
    std::vector<std::vector<std::string>> labels; // per node value labels
    std::vector<std::vector<int>> parent_order;   // per node, CPT row indexing order
    std::vector<std::vector<double>> cpt;

    bool has_tables() const { return !cpt.empty(); }

    /// Checks shapes and that every CPT row sums to 1 within 1e-12.
    void validate() const;

    /// Full joint over all nodes, mixed-radix with the last node fastest.
    std::vector<double> joint() const;

    /// Observational P(targets | conds); unmentioned nodes (latents included)
    /// are marginalized out. Maps are node index -> value index.
    double cond_prob(const std::map<int, int>& targets, const std::map<int, int>& conds) const;
};

/// Seeded random tables for an existing graph; entries bounded away from 0.
DiscreteScm random_discrete_scm(const ScmGraph& g, std::uint64_t seed, int domain_size = 2);

/// Truncated factorization: joint with each intervened node's CPT replaced by
/// a point mass, then P(targets | conds) in that world.
double interventional_prob(const DiscreteScm& m, const std::map<std::string, int>& do_assign,
                           const std::map<std::string, int>& targets,
                           const std::map<std::string, int>& conds = {});

/// Evaluates a symbolic expression against the observational distribution.
/// env binds free variables by display name ("x", "x'"). Latent references
/// raise StateError.
double eval_expr(const DiscreteScm& m, const CausalExpr& e,
                 const std::map<std::string, int>& env);

struct DerivationCheck {
    std::string name;
    double max_err = 0.0;
    bool pass = false;
};

struct DerivationReport {
    std::vector<DerivationCheck> checks;
    bool all_pass = false;
};

/// Certifies, term by term, that the interventional distribution P(y|do(x))
/// on the two-mediator confounded graph reduces to its observational closed
/// form: the s/d expansion, the rule-based hat removals, and the final
/// assembly. Every hatted quantity comes from the truncated-factorization
/// oracle; each equality must hold within 1e-10.
DerivationReport verify_derivation(const DiscreteScm& m);

/// Text DSL, one statement per line:
///   node <name> [latent]
///   edge <a> -> <b>
///   domain <name> = v1,v2,...
///   cpt <name> [| <parents...>] : p p p ...
/// '#' starts a comment. FormatError with the line number on bad input.
DiscreteScm parse_scm_text(const std::string& text);
DiscreteScm load_scm(const std::string& path);

/// The two bundled six-node graphs: X->{D,S}->Y with confounders K_D, K_S
/// into both X and Y. In variant (a) S is latent as well.
ScmGraph two_mediator_graph(bool s_latent);

}  // namespace causiam
