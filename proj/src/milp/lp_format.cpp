#include "manip/milp/lp_format.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace manip::milp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInfThreshold = 1e30;

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool valid_name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '(' || c == ')' ||
           c == '.' || c == ',';
}

std::vector<std::string> writer_names(const Model& model) {
    std::vector<std::string> names;
    std::unordered_set<std::string> used;
    for (int j = 0; j < model.num_vars(); ++j) {
        std::string name = model.var(j).name;
        if (name.empty()) name = "x" + std::to_string(j);
        for (char& c : name) {
            if (!valid_name_char(c)) c = '_';
        }
        if (std::isdigit(static_cast<unsigned char>(name[0])) || name[0] == '.') name = "v_" + name;
        if (!used.insert(name).second) {
            name += "__" + std::to_string(j);
            used.insert(name);
        }
        names.push_back(std::move(name));
    }
    return names;
}

// Duplicate variables merged, exact zeros dropped, model variable order kept.
std::map<int, double> canonical_terms(const LinExpr& expr) {
    std::map<int, double> terms;
    for (const LinTerm& term : expr) terms[term.var.index] += term.coef;
    for (auto it = terms.begin(); it != terms.end();) {
        it = it->second == 0.0 ? terms.erase(it) : std::next(it);
    }
    return terms;
}

void append_terms(std::string& out, const std::map<int, double>& terms,
                  const std::vector<std::string>& names) {
    if (terms.empty()) {
        out += "0";
        return;
    }
    bool first = true;
    for (const auto& [index, coef] : terms) {
        if (first) {
            if (coef < 0.0) out += "- ";
        } else {
            out += coef < 0.0 ? " - " : " + ";
        }
        first = false;
        const double mag = std::abs(coef);
        if (mag != 1.0) {
            out += format_number(mag);
            out += ' ';
        }
        out += names[index];
    }
}

struct ParsedVar {
    std::string name;
    double lb = 0.0;       // LP format default bound for continuous variables
    double ub = kInf;
    bool binary = false;
    bool explicit_lb = false;
    bool explicit_ub = false;
};

struct Parser {
    std::unordered_map<std::string, int> index_of;
    std::vector<ParsedVar> vars;
    LinExpr objective;
    bool maximize = false;
    bool objective_has_terms = false;
    struct Row {
        LinExpr expr;
        Sense sense;
        double rhs;
    };
    std::vector<Row> rows;

    int var_index(const std::string& name) {
        auto it = index_of.find(name);
        if (it != index_of.end()) return it->second;
        const int idx = static_cast<int>(vars.size());
        index_of.emplace(name, idx);
        vars.push_back({name, 0.0, kInf, false, false, false});
        return idx;
    }
};

bool is_operator_char(char c) { return c == '<' || c == '>' || c == '=' || c == ':'; }

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> tokens;
    size_t i = 0;
    while (i < line.size()) {
        const char c = line[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (c == ':') {
            tokens.emplace_back(":");
            ++i;
        } else if (is_operator_char(c)) {
            size_t j = i;
            while (j < line.size() && (line[j] == '<' || line[j] == '>' || line[j] == '=')) ++j;
            tokens.push_back(line.substr(i, j - i));
            i = j;
        } else {
            size_t j = i;
            while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])) &&
                   !is_operator_char(line[j])) {
                ++j;
            }
            tokens.push_back(line.substr(i, j - i));
            i = j;
        }
    }
    return tokens;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool parse_number(const std::string& token, double& value) {
    const std::string t = lower(token);
    if (t == "inf" || t == "+inf" || t == "infinity" || t == "+infinity" || t == "1e+30") {
        value = kInf;
        return true;
    }
    if (t == "-inf" || t == "-infinity" || t == "-1e+30") {
        value = -kInf;
        return true;
    }
    char* end = nullptr;
    value = std::strtod(token.c_str(), &end);
    if (end != token.c_str() + token.size()) return false;
    if (std::abs(value) >= kInfThreshold) value = std::copysign(kInf, value);
    return true;
}

bool is_sense(const std::string& token, Sense& sense) {
    if (token == "<=" || token == "=<" || token == "<") {
        sense = Sense::Le;
        return true;
    }
    if (token == ">=" || token == "=>" || token == ">") {
        sense = Sense::Ge;
        return true;
    }
    if (token == "=" || token == "==") {
        sense = Sense::Eq;
        return true;
    }
    return false;
}

enum class Section { None, Objective, Constraints, Bounds, Binaries, End };

Section classify_section(const std::vector<std::string>& tokens, size_t& consumed, bool& maximize) {
    if (tokens.empty()) return Section::None;
    const std::string head = lower(tokens[0]);
    consumed = 1;
    if (head == "minimize" || head == "min" || head == "minimise") return Section::Objective;
    if (head == "maximize" || head == "max" || head == "maximise") {
        maximize = true;
        return Section::Objective;
    }
    if (head == "subject" && tokens.size() > 1 && lower(tokens[1]) == "to") {
        consumed = 2;
        return Section::Constraints;
    }
    if (head == "st" || head == "s.t." || head == "st.") return Section::Constraints;
    if (head == "such" && tokens.size() > 1 && lower(tokens[1]) == "that") {
        consumed = 2;
        return Section::Constraints;
    }
    if (head == "bounds" || head == "bound") return Section::Bounds;
    if (head == "binaries" || head == "binary" || head == "bin") return Section::Binaries;
    if (head == "end") return Section::End;
    if (head == "general" || head == "generals" || head == "gen" || head == "integers" ||
        head == "integer" || head == "semi-continuous" || head == "sos") {
        throw std::runtime_error("unsupported LP section: " + tokens[0]);
    }
    consumed = 0;
    return Section::None;
}

// Parses "[sign] [number] name" terms and constants from a token stream,
// starting at position i; stops at a sense token or end of stream. Returns
// false (with i rewound to the term start) when allow_partial is set and the
// stream ends mid-term, so the caller can wait for continuation lines.
bool parse_expression(Parser& parser, const std::vector<std::string>& tokens, size_t& i, LinExpr& expr,
                      bool& any_var, bool allow_partial) {
    while (i < tokens.size()) {
        const size_t term_start = i;
        Sense ignored;
        if (is_sense(tokens[i], ignored)) return true;
        double sign = 1.0;
        while (i < tokens.size() && (tokens[i] == "+" || tokens[i] == "-")) {
            if (tokens[i] == "-") sign = -sign;
            ++i;
        }
        if (i == tokens.size()) {
            if (i == term_start) return true;
            if (allow_partial) {
                i = term_start;
                return false;
            }
            throw std::runtime_error("dangling sign in LP expression");
        }
        if (is_sense(tokens[i], ignored)) {
            if (i != term_start) throw std::runtime_error("dangling sign before operator");
            return true;
        }
        double value;
        const std::string token = tokens[i];
        double coef = sign;
        bool have_number = false;
        if (parse_number(token, value)) {
            coef = sign * value;
            have_number = true;
            ++i;
        } else {
            char* end = nullptr;
            const double lead = std::strtod(token.c_str(), &end);
            if (end != token.c_str() && end != token.c_str() + token.size()) {
                // Glued forms like "2x1": numeric prefix then identifier.
                expr.push_back({VarId{parser.var_index(token.substr(static_cast<size_t>(end - token.c_str())))},
                                sign * lead});
                any_var = true;
                ++i;
                continue;
            }
        }
        if (i < tokens.size() && !is_sense(tokens[i], ignored) && tokens[i] != "+" && tokens[i] != "-") {
            expr.push_back({VarId{parser.var_index(tokens[i])}, coef});
            any_var = true;
            ++i;
        } else if (!have_number) {
            throw std::runtime_error("expected number or variable in LP expression, got: " + token);
        } else if (i == tokens.size() && allow_partial) {
            i = term_start;  // trailing number: maybe a coefficient whose variable follows
            return false;
        }
        // A bare number with no following variable is an additive constant;
        // constants shift the objective and are dropped.
    }
    return true;
}

void parse_bounds_line(Parser& parser, const std::vector<std::string>& tokens) {
    if (tokens.empty()) return;
    double lo, hi;
    Sense s1, s2;
    if (tokens.size() == 2 && lower(tokens[1]) == "free") {
        ParsedVar& v = parser.vars[parser.var_index(tokens[0])];
        v.lb = -kInf;
        v.ub = kInf;
        v.explicit_lb = v.explicit_ub = true;
        return;
    }
    if (tokens.size() == 5 && parse_number(tokens[0], lo) && is_sense(tokens[1], s1) &&
        is_sense(tokens[3], s2) && parse_number(tokens[4], hi)) {
        if (s1 != Sense::Le || s2 != Sense::Le) throw std::runtime_error("unsupported range bound direction");
        ParsedVar& v = parser.vars[parser.var_index(tokens[2])];
        v.lb = lo;
        v.ub = hi;
        v.explicit_lb = v.explicit_ub = true;
        return;
    }
    if (tokens.size() == 3 && is_sense(tokens[1], s1)) {
        double value;
        if (parse_number(tokens[0], value)) {  // "0.5 <= x" form
            ParsedVar& v = parser.vars[parser.var_index(tokens[2])];
            if (s1 == Sense::Le) {
                v.lb = value;
                v.explicit_lb = true;
            } else if (s1 == Sense::Ge) {
                v.ub = value;
                v.explicit_ub = true;
            } else {
                v.lb = v.ub = value;
                v.explicit_lb = v.explicit_ub = true;
            }
            return;
        }
        if (parse_number(tokens[2], value)) {  // "x <= 0.5" form
            ParsedVar& v = parser.vars[parser.var_index(tokens[0])];
            if (s1 == Sense::Le) {
                v.ub = value;
                v.explicit_ub = true;
            } else if (s1 == Sense::Ge) {
                v.lb = value;
                v.explicit_lb = true;
            } else {
                v.lb = v.ub = value;
                v.explicit_lb = v.explicit_ub = true;
            }
            return;
        }
    }
    throw std::runtime_error("unparsable bounds line");
}

}  // namespace

std::string write_lp_string(const Model& model) {
    const std::vector<std::string> names = writer_names(model);
    std::string out;
    out.reserve(4096);
    out += "Minimize\n obj: ";
    if (model.objective_sense() == ObjSense::Minimize) {
        append_terms(out, canonical_terms(model.objective()), names);
    } else {
        out += "0";
    }
    out += "\nSubject To\n";
    for (int r = 0; r < model.num_constraints(); ++r) {
        const Constraint& con = model.constraint(r);
        out += " c" + std::to_string(r) + ": ";
        std::map<int, double> terms = canonical_terms(con.expr);
        if (terms.empty() && !con.expr.empty()) terms[con.expr.front().var.index] = 0.0;
        if (terms.empty()) throw std::runtime_error("cannot serialize constraint with no terms");
        if (terms.size() == 1 && terms.begin()->second == 0.0) {
            out += "0 " + names[terms.begin()->first];
        } else {
            append_terms(out, terms, names);
        }
        switch (con.sense) {
            case Sense::Le: out += " <= "; break;
            case Sense::Ge: out += " >= "; break;
            case Sense::Eq: out += " = "; break;
        }
        out += format_number(con.rhs);
        out += "\n";
    }
    out += "Bounds\n";
    for (int j = 0; j < model.num_vars(); ++j) {
        const Variable& v = model.var(j);
        if (v.kind == VarKind::Binary) continue;  // declared via the Binaries section
        out += ' ';
        const bool flo = std::isfinite(v.lb), fhi = std::isfinite(v.ub);
        if (v.lb == v.ub) {
            out += names[j] + " = " + format_number(v.lb);
        } else if (flo && fhi) {
            out += format_number(v.lb) + " <= " + names[j] + " <= " + format_number(v.ub);
        } else if (flo) {
            out += names[j] + " >= " + format_number(v.lb);
        } else if (fhi) {
            out += "-inf <= " + names[j] + " <= " + format_number(v.ub);
        } else {
            out += names[j] + " free";
        }
        out += "\n";
    }
    bool any_binary = false;
    for (int j = 0; j < model.num_vars(); ++j) any_binary |= model.var(j).kind == VarKind::Binary;
    if (any_binary) {
        out += "Binaries\n";
        for (int j = 0; j < model.num_vars(); ++j) {
            if (model.var(j).kind == VarKind::Binary) out += " " + names[j] + "\n";
        }
    }
    out += "End\n";
    return out;
}

void write_lp(const Model& model, const std::string& path) {
    std::ofstream file(path);
    if (!file) throw std::runtime_error("cannot open for writing: " + path);
    file << write_lp_string(model);
    if (!file) throw std::runtime_error("write failed: " + path);
}

Model read_lp_string(const std::string& text) {
    Parser parser;
    Section section = Section::None;
    std::vector<std::string> pending;  // objective / constraint token stream

    auto flush_constraints = [&](bool final) {
        size_t i = 0;
        while (i < pending.size()) {
            const size_t row_start = i;
            if (i + 1 < pending.size() && pending[i + 1] == ":") i += 2;  // row label
            LinExpr expr;
            bool any_var = false;
            const bool complete = parse_expression(parser, pending, i, expr, any_var, !final);
            bool need_more = !complete || i >= pending.size();
            Sense sense{};
            double rhs = 0.0;
            if (!need_more) {
                if (!is_sense(pending[i], sense)) {
                    throw std::runtime_error("expected sense token, got: " + pending[i]);
                }
                ++i;
                if (i >= pending.size()) {
                    need_more = true;  // rhs on the next line
                } else if (!parse_number(pending[i], rhs)) {
                    throw std::runtime_error("bad right-hand side: " + pending[i]);
                } else {
                    ++i;
                }
            }
            if (need_more) {
                if (final) throw std::runtime_error("incomplete trailing constraint");
                pending.erase(pending.begin(), pending.begin() + static_cast<long>(row_start));
                return;
            }
            parser.rows.push_back({std::move(expr), sense, rhs});
        }
        pending.clear();
    };
    auto flush_objective = [&] {
        size_t i = 0;
        if (pending.size() >= 2 && pending[1] == ":") i = 2;
        parse_expression(parser, pending, i, parser.objective, parser.objective_has_terms, false);
        if (i != pending.size()) throw std::runtime_error("unexpected token in objective");
        pending.clear();
    };

    std::istringstream stream(text);
    std::string line;
    bool saw_end = false;
    while (std::getline(stream, line)) {
        if (const size_t comment = line.find('\\'); comment != std::string::npos) {
            line.erase(comment);
        }
        std::vector<std::string> tokens = tokenize(line);
        if (tokens.empty()) continue;
        size_t consumed = 0;
        const Section next = classify_section(tokens, consumed, parser.maximize);
        if (next != Section::None) {
            if (section == Section::Objective) flush_objective();
            if (section == Section::Constraints) flush_constraints(true);
            section = next;
            if (next == Section::End) {
                saw_end = true;
                break;
            }
            tokens.erase(tokens.begin(), tokens.begin() + static_cast<long>(consumed));
            if (tokens.empty()) continue;
        }
        switch (section) {
            case Section::Objective:
                pending.insert(pending.end(), tokens.begin(), tokens.end());
                break;
            case Section::Constraints:
                pending.insert(pending.end(), tokens.begin(), tokens.end());
                flush_constraints(false);
                break;
            case Section::Bounds:
                parse_bounds_line(parser, tokens);
                break;
            case Section::Binaries:
                for (const std::string& t : tokens) parser.vars[parser.var_index(t)].binary = true;
                break;
            case Section::None:
                throw std::runtime_error("content before the objective section");
            case Section::End:
                break;
        }
    }
    if (section == Section::Objective) flush_objective();
    if (section == Section::Constraints) flush_constraints(true);
    (void)saw_end;  // a missing End line is tolerated

    Model model;
    for (ParsedVar& v : parser.vars) {
        if (v.binary) {
            v.lb = v.explicit_lb ? std::clamp(v.lb, 0.0, 1.0) : 0.0;
            v.ub = v.explicit_ub ? std::clamp(v.ub, 0.0, 1.0) : 1.0;
        }
        model.add_var(v.name, v.binary ? VarKind::Binary : VarKind::Continuous, v.lb, v.ub);
    }
    if (parser.objective_has_terms) {
        LinExpr obj = parser.objective;
        if (parser.maximize) {
            for (LinTerm& term : obj) term.coef = -term.coef;
        }
        model.set_objective(obj, ObjSense::Minimize);
    } else {
        model.set_objective({}, ObjSense::Feasibility);
    }
    for (const Parser::Row& row : parser.rows) {
        model.add_constraint(row.expr, row.sense, row.rhs);
    }
    return model;
}

Model read_lp(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw std::runtime_error("cannot open for reading: " + path);
    std::stringstream buffer;
    buffer << file.rdbuf();
    return read_lp_string(buffer.str());
}

}  // namespace manip::milp
