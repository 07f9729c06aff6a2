#pragma once

// Named templates addressable from scenario configs: test functions, mark
// laws, modulations, coefficient sets and fields. Every template declares
// its parameters with defaults; specs are normalized to
// {"template": name, "params": {...}} with all defaults filled in.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "iwl/fields.hpp"
#include "iwl/paths.hpp"
#include "iwl/smooth.hpp"

namespace iwl::cli {

using Json = nlohmann::ordered_json;

/// Invalid configuration; `what()` names the offending field path.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& path, const std::string& msg)
        : std::runtime_error(path.empty() ? msg : path + ": " + msg), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

enum class Kind { Number, Integer, Bool, String, Vector, Spec, SpecList, Terms };

inline const char* to_string(Kind k) {
    switch (k) {
        case Kind::Number: return "number";
        case Kind::Integer: return "integer";
        case Kind::Bool: return "bool";
        case Kind::String: return "string";
        case Kind::Vector: return "number[]";
        case Kind::Spec: return "spec";
        case Kind::SpecList: return "spec[]";
        case Kind::Terms: return "term[]";
    }
    return "?";
}

struct Param {
    std::string name;
    Kind kind;
    Json fallback;  ///< default; null means required
    std::string doc;
    std::string category = {};  ///< catalog category of Spec / SpecList values
};

enum class Category { TestFunction, Marks, Modulation, Coefficients, Field };

inline const char* to_string(Category c) {
    switch (c) {
        case Category::TestFunction: return "test-function";
        case Category::Marks: return "marks";
        case Category::Modulation: return "modulation";
        case Category::Coefficients: return "coefficients";
        case Category::Field: return "field";
    }
    return "?";
}

class Catalog;

struct Template {
    Category category;
    std::string name;
    std::string doc;
    std::vector<Param> params;
    bool custom = false;
    std::string base = {};  ///< built-in template behind a custom preset
    Json preset = Json::object();
};

/// Context a field template needs from the scenario.
struct FieldContext {
    std::size_t state_dim = 1;
    std::size_t driver_dim = 0;
};

class Catalog {
public:
    /// Built-in templates only.
    static Catalog builtin();

    /// Adds custom presets: {"test-function": {"name": {"template": base,
    /// "params": {...}}}, ...} keyed by category name.
    void load_registry(const Json& reg, const std::string& where = "registry") {
        if (!reg.is_object()) throw ConfigError(where, "registry must be an object");
        for (const auto& [cat, entries] : reg.items()) {
            const Category c = category_of(cat, where);
            if (!entries.is_object()) throw ConfigError(where + "." + cat, "expected an object of presets");
            for (const auto& [name, spec] : entries.items()) {
                const std::string path = where + "." + cat + "." + name;
                if (find(c, name)) throw ConfigError(path, "name already registered");
                const Json norm = normalize(c, spec, path);
                const Template* base = find(c, norm["template"].get<std::string>());
                Template t = *base;
                t.name = name;
                t.custom = true;
                t.base = base->custom ? base->base : base->name;
                t.preset = norm["params"];
                t.doc = "preset of " + base->name;
                for (auto& p : t.params) p.fallback = t.preset[p.name];
                t.preset = Json::object();
                templates_.push_back(std::move(t));
            }
        }
    }

    const Template* find(Category c, const std::string& name) const {
        for (const auto& t : templates_)
            if (t.category == c && t.name == name) return &t;
        return nullptr;
    }

    /// Templates sorted by (category, name); ties keep registration order.
    std::vector<const Template*> list() const {
        std::vector<const Template*> out;
        for (const auto& t : templates_) out.push_back(&t);
        std::stable_sort(out.begin(), out.end(), [](const Template* a, const Template* b) {
            if (a->category != b->category) return a->category < b->category;
            return a->name < b->name;
        });
        return out;
    }

    void print(std::ostream& os) const {
        Category last{};
        bool first = true;
        for (const Template* t : list()) {
            if (first || t->category != last) {
                os << (first ? "" : "\n") << "[" << to_string(t->category) << "]\n";
                last = t->category;
                first = false;
            }
            os << "  " << t->name << (t->custom ? " (custom)" : "") << ": " << t->doc << "\n";
            for (const auto& p : t->params) {
                os << "      " << p.name << " : " << to_string(p.kind);
                if (!p.category.empty()) os << "<" << p.category << ">";
                os << " = " << (p.fallback.is_null() ? "(required)" : p.fallback.dump()) << "  " << p.doc << "\n";
            }
        }
    }

    Json to_json() const {
        Json out = Json::array();
        for (const Template* t : list()) {
            Json j;
            j["category"] = to_string(t->category);
            j["name"] = t->name;
            j["custom"] = t->custom;
            j["doc"] = t->doc;
            Json ps = Json::array();
            for (const auto& p : t->params)
                ps.push_back({{"name", p.name}, {"kind", to_string(p.kind)}, {"default", p.fallback}, {"doc", p.doc}});
            j["params"] = ps;
            out.push_back(j);
        }
        return out;
    }

    /// {"template", "params"} with defaults filled; a bare string names a
    /// template with default parameters.
    Json normalize(Category c, const Json& spec, const std::string& path) const {
        std::string name;
        Json params = Json::object();
        if (spec.is_string()) {
            name = spec.get<std::string>();
        } else if (spec.is_object()) {
            for (const auto& [k, v] : spec.items())
                if (k != "template" && k != "params") throw ConfigError(path + "." + k, "unknown key");
            if (!spec.contains("template") || !spec["template"].is_string())
                throw ConfigError(path + ".template", "missing template name");
            name = spec["template"].get<std::string>();
            if (spec.contains("params")) params = spec["params"];
            if (!params.is_object()) throw ConfigError(path + ".params", "expected an object");
        } else {
            throw ConfigError(path, std::string("expected a ") + to_string(c) + " template name or object");
        }
        const Template* t = find(c, name);
        if (!t) throw ConfigError(path, "unknown " + std::string(to_string(c)) + " template '" + name + "'");
        for (const auto& [k, v] : params.items()) {
            bool known = false;
            for (const auto& p : t->params) known = known || p.name == k;
            if (!known) throw ConfigError(path + ".params." + k, "unknown parameter of '" + name + "'");
        }
        Json out;
        out["template"] = name;
        Json np = Json::object();
        for (const auto& p : t->params) {
            const std::string pp = path + ".params." + p.name;
            const bool given = params.contains(p.name);
            Json v = given ? params[p.name] : p.fallback;
            // an explicit null is an absent optional spec ("none" after normalization)
            if (v.is_null() && !(given && p.kind == Kind::Spec)) throw ConfigError(pp, "required parameter missing");
            np[p.name] = check(p, v, pp);
        }
        out["params"] = np;
        return out;
    }

    // Builders accept raw or normalized specs.

    SmoothFnPtr test_function(const Json& spec, const std::string& path) const {
        return build<SmoothFnPtr>(Category::TestFunction, spec, path, tf_);
    }
    MarkMeasure marks(const Json& spec, const std::string& path) const {
        return build<MarkMeasure>(Category::Marks, spec, path, marks_);
    }
    Modulation modulation(const Json& spec, const std::string& path) const {
        return build<Modulation>(Category::Modulation, spec, path, mod_);
    }
    Coefficients coefficients(const Json& spec, const std::string& path) const {
        return build<Coefficients>(Category::Coefficients, spec, path, coef_);
    }
    RandomField field(const Json& raw, const std::string& path, const FieldContext& ctx) const {
        const Json spec = normalize(Category::Field, raw, path);
        const std::string& name = spec["template"].get_ref<const std::string&>();
        const Template* t = find(Category::Field, name);
        const std::string key = t->custom ? t->base : t->name;
        try {
            RandomField F = field_.at(key)(*this, spec["params"], path + ".params", ctx);
            F.label = name;
            F.validate();
            return F;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(path, e.what());
        }
    }

private:
    using Builder = std::function<SmoothFnPtr(const Json&)>;
    template <class T>
    using Table = std::map<std::string, std::function<T(const Catalog&, const Json&, const std::string&)>>;
    using FieldTable =
        std::map<std::string, std::function<RandomField(const Catalog&, const Json&, const std::string&, const FieldContext&)>>;

    template <class T>
    T build(Category c, const Json& raw, const std::string& path, const Table<T>& table) const {
        const Json spec = normalize(c, raw, path);
        const std::string& name = spec["template"].get_ref<const std::string&>();
        const Template* t = find(c, name);
        if (!t) throw ConfigError(path, "unknown template '" + name + "'");
        const std::string key = t->custom ? t->base : t->name;
        try {
            return table.at(key)(*this, spec["params"], path + ".params");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(path, e.what());
        }
    }

    static Category category_of(const std::string& s, const std::string& where) {
        for (Category c : {Category::TestFunction, Category::Marks, Category::Modulation, Category::Coefficients,
                           Category::Field})
            if (s == to_string(c)) return c;
        throw ConfigError(where + "." + s, "unknown catalog category");
    }

    Json check(const Param& p, const Json& v, const std::string& path) const {
        switch (p.kind) {
            case Kind::Number:
                if (!v.is_number()) throw ConfigError(path, "expected a number");
                return v.get<double>();
            case Kind::Integer:
                if (!v.is_number_integer() || v.get<long long>() < 0)
                    throw ConfigError(path, "expected a non-negative integer");
                return v;
            case Kind::Bool:
                if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
                return v;
            case Kind::String:
                if (!v.is_string()) throw ConfigError(path, "expected a string");
                return v;
            case Kind::Vector: {
                if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
                Json out = Json::array();
                for (std::size_t i = 0; i < v.size(); ++i) {
                    if (!v[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a number");
                    out.push_back(v[i].get<double>());
                }
                return out;
            }
            case Kind::Spec:
                if (v.is_null() || (v.is_string() && v.get<std::string>() == "none")) return nullptr;
                return normalize(category_of(p.category, path), v, path);
            case Kind::SpecList: {
                if (!v.is_array()) throw ConfigError(path, "expected an array");
                Json out = Json::array();
                for (std::size_t i = 0; i < v.size(); ++i)
                    out.push_back(normalize(category_of(p.category, path), v[i], path + "[" + std::to_string(i) + "]"));
                return out;
            }
            case Kind::Terms: {
                if (!v.is_array()) throw ConfigError(path, "expected an array of terms");
                Json out = Json::array();
                for (std::size_t i = 0; i < v.size(); ++i) out.push_back(normalize_term(v[i], path + "[" + std::to_string(i) + "]"));
                return out;
            }
        }
        return v;
    }

    Json normalize_term(const Json& t, const std::string& path) const {
        if (!t.is_object()) throw ConfigError(path, "expected a term object");
        for (const auto& [k, v] : t.items())
            if (k != "layer" && k != "coord" && k != "space" && k != "measure" && k != "mod" && k != "label")
                throw ConfigError(path + "." + k, "unknown key");
        Json out;
        const Json layer = t.value("layer", Json("base"));
        if (!layer.is_string() || (layer != "base" && layer != "drift" && layer != "diffusion"))
            throw ConfigError(path + ".layer", "expected base, drift or diffusion");
        out["layer"] = layer;
        const Json coord = t.value("coord", Json(0));
        if (!coord.is_number_integer() || coord.get<long long>() < 0)
            throw ConfigError(path + ".coord", "expected a non-negative integer");
        out["coord"] = coord;
        const Json space = t.value("space", Json());
        out["space"] = space.is_null() ? Json() : normalize(Category::TestFunction, space, path + ".space");
        const Json m = t.value("measure", Json());
        if (m.is_null()) {
            out["measure"] = nullptr;
        } else {
            if (!m.is_object() || !m.contains("inner") || !m["inner"].is_array() || m["inner"].empty())
                throw ConfigError(path + ".measure", "expected {outer, inner: [test functions]}");
            for (const auto& [k, v] : m.items())
                if (k != "outer" && k != "inner") throw ConfigError(path + ".measure." + k, "unknown key");
            Json nm;
            nm["outer"] = normalize(Category::TestFunction, m.value("outer", Json("identity")), path + ".measure.outer");
            Json inner = Json::array();
            for (std::size_t i = 0; i < m["inner"].size(); ++i)
                inner.push_back(normalize(Category::TestFunction, m["inner"][i], path + ".measure.inner[" + std::to_string(i) + "]"));
            nm["inner"] = inner;
            out["measure"] = nm;
        }
        if (space.is_null() && m.is_null()) throw ConfigError(path, "a term needs a space or a measure factor");
        out["mod"] = normalize(Category::Modulation, t.value("mod", Json("constant")), path + ".mod");
        const Json label = t.value("label", Json(""));
        if (!label.is_string()) throw ConfigError(path + ".label", "expected a string");
        out["label"] = label;
        return out;
    }

public:
    /// Builds one normalized custom term and records its dimensions in F.
    FieldTerm field_term(const Json& t, const std::string& path, const FieldContext& ctx, RandomField& F) const {
        FieldTerm term;
        const std::string layer = t["layer"].get<std::string>();
        term.layer = layer == "drift" ? Layer::Drift : layer == "diffusion" ? Layer::Diffusion : Layer::Base;
        term.coord = t["coord"].get<std::size_t>();
        if (term.layer == Layer::Diffusion && term.coord >= ctx.driver_dim)
            throw ConfigError(path + ".coord", "the scenario has no such driver coordinate");
        if (!t["space"].is_null()) {
            term.space = test_function(t["space"], path + ".space");
            if (F.x_dim != 0 && F.x_dim != term.space->dim())
                throw ConfigError(path + ".space", "dimension differs from other terms");
            F.x_dim = term.space->dim();
        }
        if (!t["measure"].is_null()) {
            std::vector<SmoothFnPtr> inner;
            for (std::size_t i = 0; i < t["measure"]["inner"].size(); ++i)
                inner.push_back(test_function(t["measure"]["inner"][i], path + ".measure.inner[" + std::to_string(i) + "]"));
            try {
                term.measure = cylindrical(test_function(t["measure"]["outer"], path + ".measure.outer"), std::move(inner));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(path + ".measure", e.what());
            }
            if (F.measure_dim != 0 && F.measure_dim != term.measure->dim())
                throw ConfigError(path + ".measure", "dimension differs from other terms");
            F.measure_dim = term.measure->dim();
        }
        term.mod = modulation(t["mod"], path + ".mod");
        term.label = t["label"].get<std::string>();
        if (term.label.empty()) term.label = "F" + std::to_string(F.terms.size());
        return term;
    }

private:

    void add(Template t) { templates_.push_back(std::move(t)); }

    std::vector<Template> templates_;
    Table<SmoothFnPtr> tf_;
    Table<MarkMeasure> marks_;
    Table<Modulation> mod_;
    Table<Coefficients> coef_;
    FieldTable field_;

    friend struct Builtins;
};

// ---------------------------------------------------------------------------
// Built-in templates

namespace detail {

inline std::vector<double> vec(const Json& j) { return j.get<std::vector<double>>(); }

inline Json dir_default() { return Json::array({1.0}); }

}  // namespace detail

struct Builtins {
    static void install(Catalog& c) {
        using detail::vec;
        const Param dir{"direction", Kind::Vector, detail::dir_default(), "a in g(x) = h(a . x); its length is the dimension"};

        // test functions ---------------------------------------------------
        c.add({Category::TestFunction, "polynomial", "c0 + c1 u + ... + c4 u^4 with u = a . x",
               {{"coeffs", Kind::Vector, Json::array({0.0, 1.0}), "coefficients c0..c4"}, dir}});
        c.tf_["polynomial"] = [](const Catalog&, const Json& p, const std::string&) {
            return polynomial(vec(p["coeffs"]), vec(p["direction"]));
        };
        c.add({Category::TestFunction, "identity", "u = a . x", {dir}});
        c.tf_["identity"] = [](const Catalog&, const Json& p, const std::string&) {
            return polynomial({0.0, 1.0}, vec(p["direction"]));
        };
        c.add({Category::TestFunction, "square", "u^2 with u = a . x", {dir}});
        c.tf_["square"] = [](const Catalog&, const Json& p, const std::string&) {
            return polynomial({0.0, 0.0, 1.0}, vec(p["direction"]));
        };
        for (bool cosine : {false, true}) {
            const std::string name = cosine ? "cos" : "sin";
            c.add({Category::TestFunction, name, "amp * " + name + "(freq u + phase) with u = a . x",
                   {{"amp", Kind::Number, 1.0, "amplitude"},
                    {"freq", Kind::Number, 1.0, "angular frequency"},
                    {"phase", Kind::Number, 0.0, "phase"},
                    dir}});
            c.tf_[name] = [cosine](const Catalog&, const Json& p, const std::string&) {
                return ridge(std::make_shared<Trig>(p["amp"].get<double>(), p["freq"].get<double>(),
                                                    p["phase"].get<double>(), cosine),
                             vec(p["direction"]));
            };
        }
        c.add({Category::TestFunction, "gaussian-bump", "amp * exp(-(u - center)^2 / (2 width^2)) with u = a . x",
               {{"amp", Kind::Number, 1.0, "peak value"},
                {"center", Kind::Number, 0.0, "center"},
                {"width", Kind::Number, 1.0, "standard width (> 0)"},
                dir}});
        c.tf_["gaussian-bump"] = [](const Catalog&, const Json& p, const std::string&) {
            return ridge(std::make_shared<GaussianBump>(p["amp"].get<double>(), p["center"].get<double>(),
                                                        p["width"].get<double>()),
                         vec(p["direction"]));
        };
        c.add({Category::TestFunction, "bump", "smooth compactly supported bump of the given radius, u = a . x",
               {{"amp", Kind::Number, 1.0, "peak value"},
                {"center", Kind::Number, 0.0, "center"},
                {"radius", Kind::Number, 1.0, "support radius (> 0)"},
                dir}});
        c.tf_["bump"] = [](const Catalog&, const Json& p, const std::string&) {
            return ridge(std::make_shared<CompactBump>(p["amp"].get<double>(), p["center"].get<double>(),
                                                       p["radius"].get<double>()),
                         vec(p["direction"]));
        };
        c.add({Category::TestFunction, "quadratic", "c + a . z + 1/2 z^T Q z on R^n (n = len(a)); outer functions",
               {{"c", Kind::Number, 0.0, "constant"},
                {"a", Kind::Vector, Json::array({1.0}), "linear part"},
                {"q", Kind::Vector, Json::array(), "row-major n x n matrix; empty means 0"}}});
        c.tf_["quadratic"] = [](const Catalog&, const Json& p, const std::string&) {
            return quadratic(p["c"].get<double>(), vec(p["a"]), vec(p["q"]));
        };

        // marks ------------------------------------------------------------
        c.add({Category::Marks, "constant", "every mark equals value", {{"value", Kind::Number, 1.0, "mark"}}});
        c.marks_["constant"] = [](const Catalog&, const Json& p, const std::string&) {
            return constant_marks(1.0, p["value"].get<double>());
        };
        c.add({Category::Marks, "normal", "N(mean, sd^2) marks",
               {{"mean", Kind::Number, 0.0, "mean"}, {"sd", Kind::Number, 1.0, "standard deviation"}}});
        c.marks_["normal"] = [](const Catalog&, const Json& p, const std::string&) {
            return normal_marks(1.0, p["mean"].get<double>(), p["sd"].get<double>());
        };
        c.add({Category::Marks, "uniform", "U(lo, hi) marks",
               {{"lo", Kind::Number, 0.0, "lower end"}, {"hi", Kind::Number, 1.0, "upper end"}}});
        c.marks_["uniform"] = [](const Catalog&, const Json& p, const std::string&) {
            return uniform_marks(1.0, p["lo"].get<double>(), p["hi"].get<double>());
        };
        c.add({Category::Marks, "discrete", "finitely many marks with probabilities",
               {{"values", Kind::Vector, Json::array({1.0}), "marks"},
                {"probs", Kind::Vector, Json::array({1.0}), "probabilities (sum 1)"}}});
        c.marks_["discrete"] = [](const Catalog&, const Json& p, const std::string&) {
            return discrete_marks(1.0, vec(p["values"]), vec(p["probs"]));
        };

        // modulations ------------------------------------------------------
        c.add({Category::Modulation, "constant", "m(t, y) = value", {{"value", Kind::Number, 1.0, "value"}}});
        c.mod_["constant"] = [](const Catalog&, const Json& p, const std::string&) {
            return Modulation::constant(p["value"].get<double>());
        };
        c.add({Category::Modulation, "driver-linear", "m(t, y) = a + b * y[coord]",
               {{"a", Kind::Number, 0.0, "offset"},
                {"b", Kind::Number, 1.0, "slope"},
                {"coord", Kind::Integer, 0, "driver coordinate"}}});
        c.mod_["driver-linear"] = [](const Catalog&, const Json& p, const std::string&) {
            return Modulation::driver_linear(p["a"].get<double>(), p["b"].get<double>(), p["coord"].get<std::size_t>());
        };
        c.add({Category::Modulation, "cos-time", "m(t, y) = amp * cos(omega t)",
               {{"amp", Kind::Number, 1.0, "amplitude"}, {"omega", Kind::Number, 1.0, "angular frequency"}}});
        c.mod_["cos-time"] = [](const Catalog&, const Json& p, const std::string&) {
            return Modulation::cos_time(p["amp"].get<double>(), p["omega"].get<double>());
        };

        // coefficients -----------------------------------------------------
        const Param sig{"sigma", Kind::Vector, Json::array({1.0}),
                        "loadings on the Brownian coordinates; its length is the Brownian dimension"};
        c.add({Category::Coefficients, "bm", "dX = sigma . dW", {sig}});
        c.coef_["bm"] = [](const Catalog&, const Json& p, const std::string&) {
            const auto s = vec(p["sigma"]);
            auto k = constant_coefficients({0.0}, s, s.size());
            k.label = "bm";
            return k;
        };
        c.add({Category::Coefficients, "drifted-bm", "dX = mu dt + sigma . dW",
               {{"mu", Kind::Number, 0.5, "drift"}, sig}});
        c.coef_["drifted-bm"] = [](const Catalog&, const Json& p, const std::string&) {
            const auto s = vec(p["sigma"]);
            auto k = constant_coefficients({p["mu"].get<double>()}, s, s.size());
            k.label = "drifted-bm";
            return k;
        };
        c.add({Category::Coefficients, "ou", "dX = theta (mean - X) dt + sigma . dW",
               {{"theta", Kind::Number, 1.0, "mean reversion"}, {"mean", Kind::Number, 0.0, "long-run mean"}, sig}});
        c.coef_["ou"] = [](const Catalog&, const Json& p, const std::string&) {
            const auto s = vec(p["sigma"]);
            auto k = constant_coefficients({0.0}, s, s.size());
            const double th = p["theta"].get<double>(), m = p["mean"].get<double>();
            k.drift = [th, m](double, std::span<const double> x, std::span<double> out) { out[0] = th * (m - x[0]); };
            k.label = "ou";
            return k;
        };
        const Param rate{"rate", Kind::Number, 1.0, "jump intensity (finite)"};
        const Param common{"common", Kind::Bool, false, "jumps are common noise in conditional flows"};
        c.add({Category::Coefficients, "compound-poisson", "dX = mu dt + jumps of size e, e ~ marks, at the given rate",
               {{"mu", Kind::Number, 0.0, "drift"}, rate,
                {"marks", Kind::Spec, Json("constant"), "mark law", "marks"}, common}});
        c.coef_["compound-poisson"] = [](const Catalog& cat, const Json& p, const std::string& path) {
            auto k = constant_coefficients({p["mu"].get<double>()}, {}, 0);
            k.jumps.push_back(jump_source(cat, p, path, "cp"));
            k.label = "compound-poisson";
            return k;
        };
        c.add({Category::Coefficients, "jump-diffusion", "dX = mu dt + sigma . dW + jumps of size e, e ~ marks",
               {{"mu", Kind::Number, 0.0, "drift"}, sig, rate,
                {"marks", Kind::Spec, Json{{"template", "normal"}, {"params", {{"mean", 0.0}, {"sd", 0.5}}}},
                 "mark law", "marks"},
                common}});
        c.coef_["jump-diffusion"] = [](const Catalog& cat, const Json& p, const std::string& path) {
            const auto s = vec(p["sigma"]);
            auto k = constant_coefficients({p["mu"].get<double>()}, s, s.size());
            k.jumps.push_back(jump_source(cat, p, path, "jd"));
            k.label = "jump-diffusion";
            return k;
        };
        c.add({Category::Coefficients, "constant", "dX = b dt + sigma dW in R^d, sigma row-major d x m",
               {{"b", Kind::Vector, Json::array({0.0}), "drift vector; its length is d"},
                {"sigma", Kind::Vector, Json::array({1.0}), "d x m matrix, row-major"},
                {"brownian_dim", Kind::Integer, 1, "m"}}});
        c.coef_["constant"] = [](const Catalog&, const Json& p, const std::string&) {
            auto k = constant_coefficients(vec(p["b"]), vec(p["sigma"]), p["brownian_dim"].get<std::size_t>());
            k.label = "constant";
            return k;
        };

        // fields -----------------------------------------------------------
        const Param tf{"g", Kind::Spec, Json("identity"), "test function", "test-function"};
        c.add({Category::Field, "mean", "F(mu) = scale * <mu, g>", {{"scale", Kind::Number, 1.0, "factor"}, tf}});
        c.field_["mean"] = [](const Catalog& cat, const Json& p, const std::string& path, const FieldContext& ctx) {
            return single(cylindrical(scaled(p["scale"].get<double>()), {cat.test_function(p["g"], path + ".g")}), ctx);
        };
        c.add({Category::Field, "second-moment", "F(mu) = scale * <mu, x^2>", {{"scale", Kind::Number, 1.0, "factor"}}});
        c.field_["second-moment"] = [](const Catalog&, const Json& p, const std::string&, const FieldContext& ctx) {
            return single(cylindrical(scaled(p["scale"].get<double>()), {square_fn()}), ctx);
        };
        c.add({Category::Field, "mean-squared", "F(mu) = scale * <mu, g>^2", {{"scale", Kind::Number, 1.0, "factor"}, tf}});
        c.field_["mean-squared"] = [](const Catalog& cat, const Json& p, const std::string& path, const FieldContext& ctx) {
            return single(cylindrical(polynomial({0.0, 0.0, p["scale"].get<double>()}),
                                      {cat.test_function(p["g"], path + ".g")}),
                          ctx);
        };
        c.add({Category::Field, "x-times-driver", "F(t, x) = scale * x * Y_t[coord], written as int scale * x dY",
               {{"scale", Kind::Number, 1.0, "factor"}, {"coord", Kind::Integer, 0, "driver coordinate"}}});
        c.field_["x-times-driver"] = [](const Catalog&, const Json& p, const std::string& path, const FieldContext& ctx) {
            const std::size_t coord = p["coord"].get<std::size_t>();
            if (coord >= ctx.driver_dim) throw ConfigError(path + ".coord", "the scenario has no such driver coordinate");
            RandomField F;
            F.x_dim = ctx.state_dim;
            F.driver_dim = ctx.driver_dim;
            FieldTerm t;
            t.layer = Layer::Diffusion;
            t.coord = coord;
            t.space = polynomial({0.0, p["scale"].get<double>()});
            t.label = "x dY";
            F.terms.push_back(std::move(t));
            return F;
        };
        c.add({Category::Field, "custom", "sum of terms m(t, Y) phi(x) f(<mu, g_1>, ..., <mu, g_n>)",
               {{"terms", Kind::Terms, Json::array(),
                 "terms {layer: base|drift|diffusion, coord, space: test-function|null, "
                 "measure: {outer, inner: [test-function]}|null, mod: modulation}"}}});
        c.field_["custom"] = [](const Catalog& cat, const Json& p, const std::string& path, const FieldContext& ctx) {
            RandomField F;
            F.driver_dim = ctx.driver_dim;
            for (std::size_t i = 0; i < p["terms"].size(); ++i)
                F.terms.push_back(cat.field_term(p["terms"][i], path + ".terms[" + std::to_string(i) + "]", ctx, F));
            if (F.terms.empty()) throw ConfigError(path + ".terms", "a custom field needs at least one term");
            return F;
        };
    }

    static JumpSource jump_source(const Catalog& cat, const Json& p, const std::string& path, const char* label) {
        JumpSource j;
        j.nu = cat.marks(p["marks"], path + ".marks");
        j.nu.mass = p["rate"].get<double>();
        check_mass(j.nu.mass);
        j.beta = additive_jump({1.0});
        j.common = p["common"].get<bool>();
        j.label = label;
        return j;
    }

    static SmoothFnPtr scaled(double s) { return polynomial({0.0, s}); }

    static RandomField single(CylindricalFn f, const FieldContext& ctx) {
        RandomField F;
        F.measure_dim = f.dim();
        F.driver_dim = ctx.driver_dim;
        FieldTerm t;
        t.measure = std::move(f);
        t.label = "F0";
        F.terms.push_back(std::move(t));
        return F;
    }
};

inline Catalog Catalog::builtin() {
    Catalog c;
    Builtins::install(c);
    return c;
}

}  // namespace iwl::cli
