#pragma once
/// Workflow graphs: agent and gate nodes connected by information-flow edges.
///
/// A Workflow is an immutable value once built. Every operation here is pure:
/// mutations return a new workflow whose parent_id points at the input.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "evoflow/block.hpp"
#include "evoflow/predicate.hpp"

namespace evoflow {

using NodeId = std::string;
using Edge = std::pair<NodeId, NodeId>;

struct AgentSpec {
    NodeId id;
    std::string prompt;
    std::set<std::string> tools; ///< tool keys, "host:port/name"
    std::string model_ref;
    int step_budget = 64;

    bool operator==(const AgentSpec&) const = default;
};

/// Deterministic branching node. `branch_map` is keyed by predicate outcome
/// ("true" / "false"); `missing_key_outcome` picks the branch when the
/// predicate references a key absent from shared state.
struct GateSpec {
    NodeId id;
    Predicate predicate;
    std::map<std::string, NodeId> branch_map;
    std::string missing_key_outcome = "false";

    bool operator==(const GateSpec& o) const {
        return id == o.id && predicate == o.predicate && branch_map == o.branch_map &&
               missing_key_outcome == o.missing_key_outcome;
    }
};

using NodeSpec = std::variant<AgentSpec, GateSpec>;

const NodeId& node_id(const NodeSpec& node);
bool is_gate(const NodeSpec& node);

struct Workflow {
    std::string id;
    std::string task_prompt;
    std::vector<NodeSpec> nodes;
    std::set<Edge> edges;
    std::optional<std::string> parent_id;
    int version = 1;
    /// Auxiliary shared-state keys gates may reference, besides the implicit
    /// `<node>.status` key every node publishes.
    std::set<std::string> state_keys;

    const NodeSpec* find(std::string_view id) const;
    const AgentSpec* find_agent(std::string_view id) const;
    std::vector<NodeId> node_ids() const;
    std::vector<NodeId> predecessors(std::string_view id) const;
    std::vector<NodeId> successors(std::string_view id) const;

    bool operator==(const Workflow&) const = default;
};

/// Id derived from content, lineage and version: "wf-<16 hex>".
std::string compute_workflow_id(const Workflow& w);

/// Returns `w` with nodes sorted by id and `id` recomputed.
Workflow finalize(Workflow w);

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
    std::string summary() const;
};

ValidationReport validate(const Workflow& w);

/// Kahn's algorithm with a lexicographic ready-set. Throws CycleError.
std::vector<NodeId> topological_order(const Workflow& w);

// ---------------------------------------------------------------------------
// Mutation

struct PromptRefine {
    NodeId target;
    std::string new_prompt;
    /// Replacement tool allocation; unset keeps the current one.
    std::optional<std::set<std::string>> new_tools;
};

struct AddNode {
    NodeSpec node;
    std::vector<NodeId> predecessors;
    std::vector<NodeId> successors;
};

struct RemoveNode {
    NodeId target;
};

struct RewireEdges {
    std::vector<Edge> add;
    std::vector<Edge> remove;
};

using MutationEdit = std::variant<PromptRefine, AddNode, RemoveNode, RewireEdges>;

std::string_view edit_kind(const MutationEdit& edit);
std::string describe(const MutationEdit& edit);

/// Applies one edit. The result has version+1, parent_id = input id, and a
/// fresh id. RemoveNode connects every predecessor of the removed node to
/// every successor. Throws InvalidEdit or WouldCreateCycle; the input is
/// never modified.
Workflow apply_mutation(const Workflow& w, const MutationEdit& edit);

struct WorkflowDiff {
    std::vector<NodeId> prompt_changes; ///< nodes present in both whose spec differs
    std::vector<NodeId> nodes_added;
    std::vector<NodeId> nodes_removed;
    /// Edge changes not explained by node addition/removal (with reconnection).
    std::vector<Edge> edges_added;
    std::vector<Edge> edges_removed;

    std::size_t edges_changed() const { return edges_added.size() + edges_removed.size(); }
    int edit_class_count() const;
    bool empty() const { return edit_class_count() == 0; }
    /// Exactly one edit class, touching at most one node.
    bool is_single_edit() const;
};

WorkflowDiff diff(const Workflow& from, const Workflow& to);

// ---------------------------------------------------------------------------
// Serialization

Json to_json(const Workflow& w);
Json to_json(const NodeSpec& node);
/// Throws ParseError.
Workflow workflow_from_json(const Json& j);
NodeSpec node_from_json(const Json& j);

/// Byte-deterministic text document. Requires a valid workflow.
std::string serialize(const Workflow& w);
/// Throws ParseError (with byte offset) on malformed input.
Workflow deserialize(std::string_view bytes);

Json edit_to_json(const MutationEdit& edit);
/// Throws ParseError.
MutationEdit edit_from_json(const Json& j);

} // namespace evoflow
