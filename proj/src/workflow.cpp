#include "evoflow/workflow.hpp"

#include <algorithm>
#include <queue>
#include <sstream>

#include "evoflow/errors.hpp"

namespace evoflow {

const NodeId& node_id(const NodeSpec& node) {
    return std::visit([](const auto& n) -> const NodeId& { return n.id; }, node);
}

bool is_gate(const NodeSpec& node) { return std::holds_alternative<GateSpec>(node); }

const NodeSpec* Workflow::find(std::string_view id) const {
    for (const auto& n : nodes)
        if (node_id(n) == id)
            return &n;
    return nullptr;
}

const AgentSpec* Workflow::find_agent(std::string_view id) const {
    const NodeSpec* n = find(id);
    return n ? std::get_if<AgentSpec>(n) : nullptr;
}

std::vector<NodeId> Workflow::node_ids() const {
    std::vector<NodeId> ids;
    ids.reserve(nodes.size());
    for (const auto& n : nodes)
        ids.push_back(node_id(n));
    return ids;
}

std::vector<NodeId> Workflow::predecessors(std::string_view id) const {
    std::vector<NodeId> out;
    for (const auto& [u, v] : edges)
        if (v == id)
            out.push_back(u);
    return out;
}

std::vector<NodeId> Workflow::successors(std::string_view id) const {
    std::vector<NodeId> out;
    for (const auto& [u, v] : edges)
        if (u == id)
            out.push_back(v);
    return out;
}

std::string ValidationReport::summary() const {
    std::string out;
    for (std::size_t i = 0; i < violations.size(); ++i) {
        if (i)
            out += "; ";
        out += violations[i];
    }
    return out;
}

namespace {

// Returns the nodes Kahn's algorithm could order; fewer than |nodes| means a cycle.
std::vector<NodeId> kahn(const std::set<NodeId>& ids, const std::set<Edge>& edges) {
    std::map<NodeId, int> indegree;
    std::map<NodeId, std::vector<NodeId>> out;
    for (const auto& id : ids)
        indegree[id] = 0;
    for (const auto& [u, v] : edges) {
        if (!ids.count(u) || !ids.count(v))
            continue;
        ++indegree[v];
        out[u].push_back(v);
    }
    std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
    for (const auto& [id, deg] : indegree)
        if (deg == 0)
            ready.push(id);
    std::vector<NodeId> order;
    while (!ready.empty()) {
        NodeId id = ready.top();
        ready.pop();
        order.push_back(id);
        for (const auto& v : out[id])
            if (--indegree[v] == 0)
                ready.push(v);
    }
    return order;
}

bool has_cycle(const Workflow& w) {
    auto ids = w.node_ids();
    std::set<NodeId> id_set(ids.begin(), ids.end());
    for (const auto& [u, v] : w.edges)
        if (u == v)
            return true;
    return kahn(id_set, w.edges).size() != id_set.size();
}

} // namespace

ValidationReport validate(const Workflow& w) {
    ValidationReport report;
    auto& v = report.violations;
    if (w.nodes.empty())
        v.push_back("empty workflow: at least one node required");

    std::set<NodeId> ids;
    for (const auto& n : w.nodes) {
        const auto& id = node_id(n);
        if (id.empty())
            v.push_back("node with empty id");
        else if (!ids.insert(id).second)
            v.push_back("duplicate node id '" + id + "'");
        if (const auto* a = std::get_if<AgentSpec>(&n)) {
            if (a->prompt.empty())
                v.push_back("agent '" + id + "' has empty prompt");
            if (a->step_budget < 1)
                v.push_back("agent '" + id + "' step_budget must be >= 1");
        }
    }

    for (const auto& [a, b] : w.edges) {
        if (!ids.count(a) || !ids.count(b))
            v.push_back("dangling edge " + a + "->" + b);
        if (a == b)
            v.push_back("cycle: self-loop on '" + a + "'");
    }
    if (has_cycle(w) && std::none_of(w.edges.begin(), w.edges.end(),
                                     [](const Edge& e) { return e.first == e.second; }))
        v.push_back("cycle: graph is not acyclic");

    std::set<std::string> declared = w.state_keys;
    for (const auto& id : ids)
        declared.insert(id + ".status");
    for (const auto& n : w.nodes) {
        const auto* g = std::get_if<GateSpec>(&n);
        if (!g)
            continue;
        if (g->branch_map.empty())
            v.push_back("gate '" + g->id + "' has no branches");
        for (const auto& [outcome, target] : g->branch_map) {
            if (outcome != "true" && outcome != "false")
                v.push_back("gate '" + g->id + "' has invalid branch outcome '" + outcome + "'");
            if (!ids.count(target))
                v.push_back("gate '" + g->id + "' branch target missing: '" + target + "'");
            else if (!w.edges.count({g->id, target}))
                v.push_back("gate '" + g->id + "' branch target '" + target + "' is not a successor");
        }
        if (g->missing_key_outcome != "true" && g->missing_key_outcome != "false")
            v.push_back("gate '" + g->id + "' has invalid missing_key_outcome");
        for (const auto& key : g->predicate.referenced_keys())
            if (!declared.count(key))
                v.push_back("gate '" + g->id + "' references undeclared state key '" + key + "'");
    }
    return report;
}

std::vector<NodeId> topological_order(const Workflow& w) {
    auto ids = w.node_ids();
    std::set<NodeId> id_set(ids.begin(), ids.end());
    for (const auto& [u, v] : w.edges)
        if (u == v)
            throw CycleError("self-loop on '" + u + "'");
    auto order = kahn(id_set, w.edges);
    if (order.size() != id_set.size())
        throw CycleError("workflow '" + w.id + "' contains a cycle");
    return order;
}

// ---------------------------------------------------------------------------
// Serialization

Json to_json(const NodeSpec& node) {
    if (const auto* a = std::get_if<AgentSpec>(&node)) {
        return Json{{"kind", "agent"},
                    {"id", a->id},
                    {"prompt", a->prompt},
                    {"tools", a->tools},
                    {"model_ref", a->model_ref},
                    {"step_budget", a->step_budget}};
    }
    const auto& g = std::get<GateSpec>(node);
    return Json{{"kind", "gate"},
                {"id", g.id},
                {"predicate", g.predicate.to_string()},
                {"branches", g.branch_map},
                {"missing_key_outcome", g.missing_key_outcome}};
}

Json to_json(const Workflow& w) {
    std::vector<const NodeSpec*> sorted;
    for (const auto& n : w.nodes)
        sorted.push_back(&n);
    std::sort(sorted.begin(), sorted.end(),
              [](const NodeSpec* a, const NodeSpec* b) { return node_id(*a) < node_id(*b); });
    Json nodes = Json::array();
    for (const auto* n : sorted)
        nodes.push_back(to_json(*n));
    Json edges = Json::array();
    for (const auto& [u, v] : w.edges)
        edges.push_back(Json::array({u, v}));
    return Json{{"id", w.id},
                {"task_prompt", w.task_prompt},
                {"version", w.version},
                {"parent_id", w.parent_id ? Json(*w.parent_id) : Json(nullptr)},
                {"state_keys", w.state_keys},
                {"nodes", std::move(nodes)},
                {"edges", std::move(edges)}};
}

namespace {

[[noreturn]] void schema_fail(const std::string& what) { throw ParseError("workflow: " + what, 0); }

const Json& require(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key))
        schema_fail(std::string("missing field '") + key + "'");
    return j.at(key);
}

std::string require_string(const Json& j, const char* key) {
    const Json& v = require(j, key);
    if (!v.is_string())
        schema_fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

Edge edge_from_json(const Json& e) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string())
        schema_fail("edge must be a [from, to] pair of strings");
    return {e[0].get<std::string>(), e[1].get<std::string>()};
}

std::set<std::string> string_set(const Json& j, const char* what) {
    if (!j.is_array())
        schema_fail(std::string(what) + " must be an array");
    std::set<std::string> out;
    for (const auto& s : j) {
        if (!s.is_string())
            schema_fail(std::string(what) + " entries must be strings");
        out.insert(s.get<std::string>());
    }
    return out;
}

} // namespace

NodeSpec node_from_json(const Json& j) {
    std::string kind = j.is_object() && j.contains("kind") ? require_string(j, "kind") : "agent";
    if (kind == "agent") {
        AgentSpec a;
        a.id = require_string(j, "id");
        a.prompt = require_string(j, "prompt");
        if (j.contains("tools"))
            a.tools = string_set(j.at("tools"), "tools");
        if (j.contains("model_ref") && !j.at("model_ref").is_null())
            a.model_ref = require_string(j, "model_ref");
        if (j.contains("step_budget")) {
            if (!j.at("step_budget").is_number_integer())
                schema_fail("step_budget must be an integer");
            a.step_budget = j.at("step_budget").get<int>();
        }
        return a;
    }
    if (kind == "gate") {
        GateSpec g;
        g.id = require_string(j, "id");
        g.predicate = Predicate::parse(require_string(j, "predicate"));
        const Json& branches = require(j, "branches");
        if (!branches.is_object())
            schema_fail("branches must be an object");
        for (const auto& [outcome, target] : branches.items()) {
            if (!target.is_string())
                schema_fail("branch targets must be strings");
            g.branch_map[outcome] = target.get<std::string>();
        }
        if (j.contains("missing_key_outcome"))
            g.missing_key_outcome = require_string(j, "missing_key_outcome");
        return g;
    }
    schema_fail("unknown node kind '" + kind + "'");
}

Workflow workflow_from_json(const Json& j) {
    if (!j.is_object())
        schema_fail("document must be an object");
    Workflow w;
    w.id = require_string(j, "id");
    w.task_prompt = require_string(j, "task_prompt");
    const Json& version = require(j, "version");
    if (!version.is_number_integer())
        schema_fail("version must be an integer");
    w.version = version.get<int>();
    const Json& parent = require(j, "parent_id");
    if (!parent.is_null()) {
        if (!parent.is_string())
            schema_fail("parent_id must be a string or null");
        w.parent_id = parent.get<std::string>();
    }
    if (j.contains("state_keys"))
        w.state_keys = string_set(j.at("state_keys"), "state_keys");
    const Json& nodes = require(j, "nodes");
    if (!nodes.is_array())
        schema_fail("nodes must be an array");
    for (const auto& n : nodes)
        w.nodes.push_back(node_from_json(n));
    std::sort(w.nodes.begin(), w.nodes.end(),
              [](const NodeSpec& a, const NodeSpec& b) { return node_id(a) < node_id(b); });
    const Json& edges = require(j, "edges");
    if (!edges.is_array())
        schema_fail("edges must be an array");
    for (const auto& e : edges)
        w.edges.insert(edge_from_json(e));
    return w;
}

std::string serialize(const Workflow& w) {
    auto report = validate(w);
    if (!report.ok())
        throw ValidationError("cannot serialize invalid workflow: " + report.summary());
    return to_json(w).dump(2) + "\n";
}

Workflow deserialize(std::string_view bytes) {
    Json j;
    try {
        j = Json::parse(bytes.begin(), bytes.end());
    } catch (const Json::parse_error& e) {
        throw ParseError(std::string("workflow: malformed document: ") + e.what(),
                         e.byte > 0 ? e.byte - 1 : 0);
    }
    return workflow_from_json(j);
}

std::string compute_workflow_id(const Workflow& w) {
    Json j = to_json(w);
    j.erase("id");
    return "wf-" + hex64(fnv1a64(j.dump()));
}

Workflow finalize(Workflow w) {
    std::sort(w.nodes.begin(), w.nodes.end(),
              [](const NodeSpec& a, const NodeSpec& b) { return node_id(a) < node_id(b); });
    w.id = compute_workflow_id(w);
    return w;
}

// ---------------------------------------------------------------------------
// Mutation

std::string_view edit_kind(const MutationEdit& edit) {
    struct V {
        std::string_view operator()(const PromptRefine&) const { return "PromptRefine"; }
        std::string_view operator()(const AddNode&) const { return "AddNode"; }
        std::string_view operator()(const RemoveNode&) const { return "RemoveNode"; }
        std::string_view operator()(const RewireEdges&) const { return "RewireEdges"; }
    };
    return std::visit(V{}, edit);
}

std::string describe(const MutationEdit& edit) {
    std::ostringstream os;
    os << edit_kind(edit) << ' ';
    if (const auto* p = std::get_if<PromptRefine>(&edit)) {
        os << p->target;
        if (p->new_tools)
            os << " (+tools)";
    } else if (const auto* a = std::get_if<AddNode>(&edit)) {
        os << node_id(a->node) << " in=" << a->predecessors.size() << " out=" << a->successors.size();
    } else if (const auto* r = std::get_if<RemoveNode>(&edit)) {
        os << r->target;
    } else {
        const auto& e = std::get<RewireEdges>(edit);
        for (const auto& [u, v] : e.add)
            os << '+' << u << "->" << v << ' ';
        for (const auto& [u, v] : e.remove)
            os << '-' << u << "->" << v << ' ';
    }
    std::string s = os.str();
    while (!s.empty() && s.back() == ' ')
        s.pop_back();
    return s;
}

Workflow apply_mutation(const Workflow& w, const MutationEdit& edit) {
    Workflow out = w;

    if (const auto* p = std::get_if<PromptRefine>(&edit)) {
        auto it = std::find_if(out.nodes.begin(), out.nodes.end(),
                               [&](const NodeSpec& n) { return node_id(n) == p->target; });
        if (it == out.nodes.end())
            throw InvalidEdit("PromptRefine target '" + p->target + "' not found");
        auto* agent = std::get_if<AgentSpec>(&*it);
        if (!agent)
            throw InvalidEdit("PromptRefine target '" + p->target + "' is a gate");
        if (p->new_prompt.empty())
            throw InvalidEdit("PromptRefine with empty prompt");
        if (agent->prompt == p->new_prompt && (!p->new_tools || *p->new_tools == agent->tools))
            throw InvalidEdit("PromptRefine leaves '" + p->target + "' unchanged");
        agent->prompt = p->new_prompt;
        if (p->new_tools)
            agent->tools = *p->new_tools;
    } else if (const auto* a = std::get_if<AddNode>(&edit)) {
        const NodeId& id = node_id(a->node);
        if (id.empty())
            throw InvalidEdit("AddNode with empty id");
        if (w.find(id))
            throw InvalidEdit("AddNode id '" + id + "' already exists");
        for (const auto& p : a->predecessors)
            if (!w.find(p))
                throw InvalidEdit("AddNode predecessor '" + p + "' not found");
        for (const auto& s : a->successors)
            if (!w.find(s))
                throw InvalidEdit("AddNode successor '" + s + "' not found");
        out.nodes.push_back(a->node);
        for (const auto& p : a->predecessors)
            out.edges.insert({p, id});
        for (const auto& s : a->successors)
            out.edges.insert({id, s});
    } else if (const auto* r = std::get_if<RemoveNode>(&edit)) {
        if (!w.find(r->target))
            throw InvalidEdit("RemoveNode target '" + r->target + "' not found");
        auto preds = w.predecessors(r->target);
        auto succs = w.successors(r->target);
        std::erase_if(out.nodes, [&](const NodeSpec& n) { return node_id(n) == r->target; });
        std::erase_if(out.edges,
                      [&](const Edge& e) { return e.first == r->target || e.second == r->target; });
        for (const auto& p : preds)
            for (const auto& s : succs)
                out.edges.insert({p, s});
    } else {
        const auto& rw = std::get<RewireEdges>(edit);
        if (rw.add.empty() && rw.remove.empty())
            throw InvalidEdit("RewireEdges with no changes");
        for (const auto& e : rw.remove) {
            if (!out.edges.erase(e))
                throw InvalidEdit("RewireEdges removes absent edge " + e.first + "->" + e.second);
        }
        for (const auto& e : rw.add) {
            if (!w.find(e.first) || !w.find(e.second))
                throw InvalidEdit("RewireEdges adds edge with unknown endpoint " + e.first + "->" +
                                  e.second);
            if (!out.edges.insert(e).second)
                throw InvalidEdit("RewireEdges adds existing edge " + e.first + "->" + e.second);
        }
        if (out.edges == w.edges)
            throw InvalidEdit("RewireEdges leaves the edge set unchanged");
    }

    if (has_cycle(out))
        throw WouldCreateCycle(std::string(edit_kind(edit)) + " would create a cycle");
    auto report = validate(out);
    if (!report.ok())
        throw InvalidEdit(std::string(edit_kind(edit)) + " yields invalid workflow: " +
                          report.summary());
    out.parent_id = w.id;
    out.version = w.version + 1;
    return finalize(std::move(out));
}

int WorkflowDiff::edit_class_count() const {
    return int(!prompt_changes.empty()) + int(!nodes_added.empty()) + int(!nodes_removed.empty()) +
           int(edges_changed() > 0);
}

bool WorkflowDiff::is_single_edit() const {
    return edit_class_count() == 1 &&
           prompt_changes.size() + nodes_added.size() + nodes_removed.size() <= 1;
}

WorkflowDiff diff(const Workflow& from, const Workflow& to) {
    WorkflowDiff d;
    std::set<NodeId> removed;
    std::set<NodeId> added;
    for (const auto& n : from.nodes) {
        const auto& id = node_id(n);
        const NodeSpec* other = to.find(id);
        if (!other) {
            d.nodes_removed.push_back(id);
            removed.insert(id);
        } else if (!(*other == n)) {
            d.prompt_changes.push_back(id);
        }
    }
    for (const auto& n : to.nodes) {
        if (!from.find(node_id(n))) {
            d.nodes_added.push_back(node_id(n));
            added.insert(node_id(n));
        }
    }

    // Edges `to` would have if only the node additions/removals had happened.
    std::set<Edge> expected = from.edges;
    for (const auto& r : removed) {
        std::vector<NodeId> preds;
        std::vector<NodeId> succs;
        for (const auto& [u, v] : expected) {
            if (v == r)
                preds.push_back(u);
            if (u == r)
                succs.push_back(v);
        }
        std::erase_if(expected, [&](const Edge& e) { return e.first == r || e.second == r; });
        for (const auto& p : preds)
            for (const auto& s : succs)
                if (p != s)
                    expected.insert({p, s});
    }
    for (const auto& e : to.edges)
        if (added.count(e.first) || added.count(e.second))
            expected.insert(e);

    std::set_difference(to.edges.begin(), to.edges.end(), expected.begin(), expected.end(),
                        std::back_inserter(d.edges_added));
    std::set_difference(expected.begin(), expected.end(), to.edges.begin(), to.edges.end(),
                        std::back_inserter(d.edges_removed));
    return d;
}

// ---------------------------------------------------------------------------
// Edit wire format

Json edit_to_json(const MutationEdit& edit) {
    Json j{{"kind", edit_kind(edit)}};
    auto edges_json = [](const std::vector<Edge>& edges) {
        Json arr = Json::array();
        for (const auto& [u, v] : edges)
            arr.push_back(Json::array({u, v}));
        return arr;
    };
    if (const auto* p = std::get_if<PromptRefine>(&edit)) {
        j["target"] = p->target;
        j["prompt"] = p->new_prompt;
        if (p->new_tools)
            j["tools"] = *p->new_tools;
    } else if (const auto* a = std::get_if<AddNode>(&edit)) {
        j["node"] = to_json(a->node);
        j["predecessors"] = a->predecessors;
        j["successors"] = a->successors;
    } else if (const auto* r = std::get_if<RemoveNode>(&edit)) {
        j["target"] = r->target;
    } else {
        const auto& rw = std::get<RewireEdges>(edit);
        j["add"] = edges_json(rw.add);
        j["remove"] = edges_json(rw.remove);
    }
    return j;
}

MutationEdit edit_from_json(const Json& j) {
    if (!j.is_object())
        throw ParseError("mutation: edit must be an object", 0);
    auto str = [&](const char* key) {
        if (!j.contains(key) || !j.at(key).is_string())
            throw ParseError(std::string("mutation: missing string field '") + key + "'", 0);
        return j.at(key).get<std::string>();
    };
    auto id_list = [&](const char* key) {
        std::vector<NodeId> out;
        if (!j.contains(key))
            return out;
        if (!j.at(key).is_array())
            throw ParseError(std::string("mutation: '") + key + "' must be an array", 0);
        for (const auto& s : j.at(key)) {
            if (!s.is_string())
                throw ParseError(std::string("mutation: '") + key + "' entries must be strings", 0);
            out.push_back(s.get<std::string>());
        }
        return out;
    };
    auto edge_list = [&](const char* key) {
        std::vector<Edge> out;
        if (!j.contains(key))
            return out;
        if (!j.at(key).is_array())
            throw ParseError(std::string("mutation: '") + key + "' must be an array", 0);
        for (const auto& e : j.at(key))
            out.push_back(edge_from_json(e));
        return out;
    };

    std::string kind = str("kind");
    if (kind == "PromptRefine") {
        PromptRefine p{str("target"), str("prompt"), std::nullopt};
        if (j.contains("tools"))
            p.new_tools = string_set(j.at("tools"), "tools");
        return p;
    }
    if (kind == "AddNode") {
        if (!j.contains("node"))
            throw ParseError("mutation: AddNode requires 'node'", 0);
        return AddNode{node_from_json(j.at("node")), id_list("predecessors"), id_list("successors")};
    }
    if (kind == "RemoveNode")
        return RemoveNode{str("target")};
    if (kind == "RewireEdges")
        return RewireEdges{edge_list("add"), edge_list("remove")};
    throw ParseError("mutation: unknown edit kind '" + kind + "'", 0);
}

} // namespace evoflow
