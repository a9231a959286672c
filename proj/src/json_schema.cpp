#include "evoflow/json_schema.hpp"

#include <cmath>

namespace evoflow {
namespace {

bool matches_type(const std::string& type, const Json& v) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "boolean") return v.is_boolean();
    if (type == "null") return v.is_null();
    if (type == "number") return v.is_number();
    if (type == "integer") {
        if (v.is_number_integer())
            return true;
        if (v.is_number_float()) {
            double d = v.get<double>();
            return std::isfinite(d) && std::floor(d) == d;
        }
        return false;
    }
    return true;
}

void check(const Json& schema, const Json& v, const std::string& path, std::vector<std::string>& out) {
    if (schema.is_boolean()) {
        if (!schema.get<bool>())
            out.push_back(path + ": no value allowed");
        return;
    }
    if (!schema.is_object())
        return;

    if (schema.contains("type")) {
        const Json& t = schema["type"];
        bool ok = false;
        std::string expected;
        if (t.is_string()) {
            ok = matches_type(t.get<std::string>(), v);
            expected = t.get<std::string>();
        } else if (t.is_array()) {
            for (const auto& alt : t) {
                if (!alt.is_string())
                    continue;
                ok = ok || matches_type(alt.get<std::string>(), v);
                expected += (expected.empty() ? "" : "|") + alt.get<std::string>();
            }
        } else {
            ok = true;
        }
        if (!ok) {
            out.push_back(path + ": expected " + expected + ", got " + std::string(v.type_name()));
            return;
        }
    }
    if (schema.contains("enum") && schema["enum"].is_array()) {
        bool found = false;
        for (const auto& e : schema["enum"])
            found = found || e == v;
        if (!found)
            out.push_back(path + ": value not in enum");
    }
    if (schema.contains("const") && schema["const"] != v)
        out.push_back(path + ": value differs from const");

    if (v.is_number()) {
        double d = v.get<double>();
        if (schema.contains("minimum") && schema["minimum"].is_number() && d < schema["minimum"].get<double>())
            out.push_back(path + ": below minimum");
        if (schema.contains("maximum") && schema["maximum"].is_number() && d > schema["maximum"].get<double>())
            out.push_back(path + ": above maximum");
    }
    if (v.is_string()) {
        auto len = v.get_ref<const std::string&>().size();
        if (schema.contains("minLength") && schema["minLength"].is_number_unsigned() &&
            len < schema["minLength"].get<std::size_t>())
            out.push_back(path + ": shorter than minLength");
        if (schema.contains("maxLength") && schema["maxLength"].is_number_unsigned() &&
            len > schema["maxLength"].get<std::size_t>())
            out.push_back(path + ": longer than maxLength");
    }
    if (v.is_array()) {
        if (schema.contains("minItems") && schema["minItems"].is_number_unsigned() &&
            v.size() < schema["minItems"].get<std::size_t>())
            out.push_back(path + ": fewer than minItems");
        if (schema.contains("maxItems") && schema["maxItems"].is_number_unsigned() &&
            v.size() > schema["maxItems"].get<std::size_t>())
            out.push_back(path + ": more than maxItems");
        if (schema.contains("items") && (schema["items"].is_object() || schema["items"].is_boolean()))
            for (std::size_t i = 0; i < v.size(); ++i)
                check(schema["items"], v[i], path + "[" + std::to_string(i) + "]", out);
    }
    if (v.is_object()) {
        const Json empty = Json::object();
        const Json& props = schema.contains("properties") && schema["properties"].is_object()
                                ? schema["properties"]
                                : empty;
        if (schema.contains("required") && schema["required"].is_array())
            for (const auto& r : schema["required"])
                if (r.is_string() && !v.contains(r.get<std::string>()))
                    out.push_back(path + ": missing required property '" + r.get<std::string>() + "'");
        for (const auto& [key, value] : v.items()) {
            std::string sub = path + "." + key;
            if (props.contains(key)) {
                check(props[key], value, sub, out);
            } else if (schema.contains("additionalProperties")) {
                const Json& extra = schema["additionalProperties"];
                if (extra.is_boolean() && !extra.get<bool>())
                    out.push_back(sub + ": additional property not allowed");
                else if (extra.is_object())
                    check(extra, value, sub, out);
            }
        }
    }

    if (schema.contains("allOf") && schema["allOf"].is_array())
        for (const auto& s : schema["allOf"])
            check(s, v, path, out);
    auto count_passing = [&](const Json& alts) {
        int n = 0;
        for (const auto& s : alts) {
            std::vector<std::string> sub;
            check(s, v, path, sub);
            n += sub.empty();
        }
        return n;
    };
    if (schema.contains("anyOf") && schema["anyOf"].is_array() && count_passing(schema["anyOf"]) == 0)
        out.push_back(path + ": matches no anyOf alternative");
    if (schema.contains("oneOf") && schema["oneOf"].is_array() && count_passing(schema["oneOf"]) != 1)
        out.push_back(path + ": must match exactly one oneOf alternative");
}

} // namespace

std::vector<std::string> schema_violations(const Json& schema, const Json& instance) {
    std::vector<std::string> out;
    check(schema, instance, "$", out);
    return out;
}

} // namespace evoflow
