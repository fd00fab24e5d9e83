#include <algorithm>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "twostage/csv_io.hpp"
#include "twostage/errors.hpp"
#include "twostage/simulate.hpp"

namespace twostage {

using nlohmann::json;

SimConfig sim_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw Error(ErrorCategory::config, std::string("config parse error: ") + e.what());
    }
    SimConfig cfg;
    auto& d = cfg.dgp;
    try {
        d.model = j.value("model", d.model);
        d.g = j.value("g", d.g);
        d.pi1 = j.value("pi1", d.pi1);
        d.pi2 = j.value("pi2", d.pi2);
        d.mu00 = j.value("mu00", d.mu00);
        d.tau = j.value("tau", d.tau);
        d.omega = j.value("omega", d.omega);
        d.gamma = j.value("gamma", d.gamma);
        d.u_scale = j.value("u_scale", d.u_scale);
        d.eps_scale = j.value("eps_scale", d.eps_scale);
        d.noise_as_variance = j.value("noise_as_variance", d.noise_as_variance);
        d.sampling_fraction = j.value("sampling_fraction", d.sampling_fraction);
        if (!j.contains("seed"))
            throw Error(ErrorCategory::config,
                        "config must set 'seed' explicitly (reproducibility)");
        d.seed = j.at("seed").get<std::uint64_t>();
        if (d.model == "custom") {
            d.alpha_00 = j.value("alpha_00", d.alpha_00);
            d.alpha_0p = j.value("alpha_0p", d.alpha_0p);
            d.alpha_1p = j.value("alpha_1p", d.alpha_1p);
            d.beta_00 = j.value("beta_00", d.beta_00);
            d.beta_0p = j.value("beta_0p", d.beta_0p);
            d.beta_1p = j.value("beta_1p", d.beta_1p);
        }

        cfg.replications = j.value("replications", cfg.replications);
        if (cfg.replications < 1)
            throw Error(ErrorCategory::config, "replications must be at least 1");
        std::string kind = j.value("kind", std::string("rejection"));
        if (kind == "rejection") cfg.kind = McKind::rejection;
        else if (kind == "mse_ratio") cfg.kind = McKind::mse_ratio;
        else throw Error(ErrorCategory::config, "kind must be rejection or mse_ratio");
        std::string analysis = j.value("analysis", std::string("adjusted_t"));
        if (analysis == "adjusted_t") cfg.analysis = McAnalysis::adjusted_t;
        else if (analysis == "ols_methods") cfg.analysis = McAnalysis::ols_methods;
        else
            throw Error(ErrorCategory::config,
                        "analysis must be adjusted_t or ols_methods");
        cfg.alpha = j.value("alpha", cfg.alpha);
        cfg.theta0 = j.value("theta0", cfg.theta0);
        cfg.threads = j.value("threads", cfg.threads);
        if (j.contains("estimands"))
            cfg.estimands = j.at("estimands").get<std::vector<std::string>>();
        if (!j.contains("pairs") || !j.at("pairs").is_array() || j.at("pairs").empty())
            throw Error(ErrorCategory::config, "config needs a non-empty 'pairs' array");
        for (const auto& p : j.at("pairs")) {
            DesignPair pair;
            pair.first = design_from_string(p.at("first").get<std::string>());
            pair.second = design_from_string(p.at("second").get<std::string>());
            cfg.pairs.push_back(pair);
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCategory::config, std::string("bad config field: ") + e.what());
    }
    return cfg;
}

std::string mc_table_to_json(const McTable& t) {
    json j;
    j["kind"] = t.kind == McKind::rejection ? "rejection" : "mse_ratio";
    j["replications"] = t.replications;
    j["cells"] = json::array();
    for (const auto& c : t.cells) {
        json jc = {{"first", c.first},
                   {"second", c.second},
                   {"estimand", c.estimand},
                   {"value", c.value},
                   {"mc_se", c.mc_se}};
        if (t.kind == McKind::mse_ratio) jc["mse"] = c.mse;
        j["cells"].push_back(jc);
    }
    return j.dump(2) + "\n";
}

std::string mc_table_to_csv(const McTable& t) {
    std::ostringstream out;
    const bool mse = t.kind == McKind::mse_ratio;
    out << "first,second,estimand,value,mc_se,replications,kind" << (mse ? ",mse" : "")
        << "\n";
    const char* kind = mse ? "mse_ratio" : "rejection";
    for (const auto& c : t.cells) {
        out << c.first << ',' << c.second << ',' << c.estimand << ','
            << format_real(c.value) << ',' << format_real(c.mc_se) << ','
            << t.replications << ',' << kind;
        if (mse) out << ',' << format_real(c.mse);
        out << '\n';
    }
    return out.str();
}

std::string mc_table_to_text(const McTable& t) {
    // First-stage designs as rows, second-stage designs as columns, one
    // block per estimand / test.
    std::vector<std::string> firsts, seconds, ests;
    auto push_unique = [](std::vector<std::string>& v, const std::string& s) {
        if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
    };
    for (const auto& c : t.cells) {
        push_unique(firsts, c.first);
        push_unique(seconds, c.second);
        push_unique(ests, c.estimand);
    }
    auto find_cell = [&](const std::string& f, const std::string& s,
                         const std::string& e) -> const McCell* {
        for (const auto& c : t.cells)
            if (c.first == f && c.second == s && c.estimand == e) return &c;
        return nullptr;
    };

    std::ostringstream out;
    out << (t.kind == McKind::rejection ? "rejection probabilities"
                                        : "MSE ratios vs C/C")
        << "  (" << t.replications << " replications; rows: first stage, "
        << "columns: second stage)\n";
    for (const auto& e : ests) {
        out << '\n' << e << '\n';
        out << std::left << std::setw(8) << "";
        for (const auto& s : seconds) out << std::right << std::setw(10) << s;
        out << '\n';
        for (const auto& f : firsts) {
            out << std::left << std::setw(8) << f;
            for (const auto& s : seconds) {
                const McCell* c = find_cell(f, s, e);
                if (c)
                    out << std::right << std::setw(10) << std::fixed
                        << std::setprecision(4) << c->value;
                else
                    out << std::right << std::setw(10) << ".";
            }
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace twostage
