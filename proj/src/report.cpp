#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "protoshot/error.hpp"
#include "protoshot/evalharness.hpp"

namespace protoshot {
namespace {

using nlohmann::json;

std::string format_double(double v, const char* fmt) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

void emit(const json& value, std::ostringstream& out, int depth) {
    const std::string pad(static_cast<std::size_t>(depth + 1) * 2, ' ');
    const std::string close_pad(static_cast<std::size_t>(depth) * 2, ' ');
    switch (value.type()) {
        case json::value_t::object: {
            if (value.empty()) {
                out << "{}";
                return;
            }
            out << "{\n";
            bool first = true;
            // nlohmann's default object is a std::map, so iteration is key-sorted.
            for (const auto& [key, item] : value.items()) {
                if (!first) out << ",\n";
                first = false;
                out << pad << json(key).dump() << ": ";
                emit(item, out, depth + 1);
            }
            out << '\n' << close_pad << '}';
            return;
        }
        case json::value_t::array: {
            if (value.empty()) {
                out << "[]";
                return;
            }
            // Arrays of scalars stay on one line.
            const bool flat = std::none_of(value.begin(), value.end(),
                                           [](const json& v) { return v.is_structured(); });
            out << '[';
            bool first = true;
            for (const auto& item : value) {
                if (!first) out << (flat ? ", " : ",");
                first = false;
                if (!flat) out << '\n' << pad;
                emit(item, out, depth + 1);
            }
            if (!flat) out << '\n' << close_pad;
            out << ']';
            return;
        }
        case json::value_t::number_float: {
            const double v = value.get<double>();
            if (!std::isfinite(v)) throw Error(Errc::InvalidConfig, "non-finite value in report");
            out << format_double(v, "%.17g");
            return;
        }
        default:
            out << value.dump();
    }
}

json record_to_json(const EvalRecord& r) {
    json j = {{"method", method_name(r.method)},
              {"fold", r.fold},
              {"seed", r.seed},
              {"k", r.k},
              {"top_k", r.top_k},
              {"balanced_accuracy", r.balanced_accuracy},
              {"recalls", r.recalls}};
    j["prompt"] = r.prompt ? json(*r.prompt) : json(nullptr);
    j["min_effective_top_k"] = r.min_effective_top_k ? json(*r.min_effective_top_k) : json(nullptr);
    return j;
}

json aggregate_to_json(const Aggregate& a) {
    return {{"method", method_name(a.method)}, {"k", a.k},       {"top_k", a.top_k},
            {"mean", a.mean},                  {"std", a.std},   {"replicates", a.replicates},
            {"records", a.records}};
}

std::optional<std::size_t> optional_size(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::size_t>();
}

}  // namespace

std::string canonical_json(const json& value) {
    std::ostringstream out;
    emit(value, out, 0);
    out << '\n';
    return out.str();
}

void write_report_json(const EvalReport& report, std::ostream& sink) {
    json records = json::array();
    for (const auto& r : report.records) records.push_back(record_to_json(r));
    json aggregates = json::array();
    for (const auto& a : report.aggregates) aggregates.push_back(aggregate_to_json(a));
    sink << canonical_json({{"config", report.config}, {"records", records}, {"aggregates", aggregates}});
    if (!sink) throw Error(Errc::IoFailure, "failed writing report");
}

void write_report_csv(const EvalReport& report, std::ostream& sink) {
    sink << "method,fold,seed,k,top_k,balanced_accuracy\n";
    for (const auto& r : report.records) {
        sink << method_name(r.method) << ',' << r.fold << ',' << r.seed << ',' << r.k << ',' << r.top_k << ','
             << format_double(r.balanced_accuracy, "%.6g") << '\n';
    }
    if (!sink) throw Error(Errc::IoFailure, "failed writing report CSV");
}

EvalReport read_report_json(std::istream& source) {
    EvalReport report;
    try {
        const json doc = json::parse(source);
        report.config = doc.at("config");
        for (const auto& j : doc.at("records")) {
            EvalRecord r;
            r.method = parse_method(j.at("method").get<std::string>());
            r.fold = j.at("fold").get<std::size_t>();
            r.seed = j.at("seed").get<std::uint64_t>();
            r.k = j.at("k").get<std::size_t>();
            r.top_k = j.at("top_k").get<std::size_t>();
            r.balanced_accuracy = j.at("balanced_accuracy").get<double>();
            r.recalls = j.at("recalls").get<std::vector<double>>();
            r.prompt = optional_size(j, "prompt");
            r.min_effective_top_k = optional_size(j, "min_effective_top_k");
            if (!(r.balanced_accuracy >= 0.0 && r.balanced_accuracy <= 1.0)) {
                throw Error(Errc::MalformedReport, "balanced_accuracy outside [0, 1]");
            }
            report.records.push_back(std::move(r));
        }
        for (const auto& j : doc.at("aggregates")) {
            Aggregate a;
            a.method = parse_method(j.at("method").get<std::string>());
            a.k = j.at("k").get<std::size_t>();
            a.top_k = j.at("top_k").get<std::size_t>();
            a.mean = j.at("mean").get<double>();
            a.std = j.at("std").get<double>();
            a.replicates = j.at("replicates").get<std::size_t>();
            a.records = j.at("records").get<std::size_t>();
            report.aggregates.push_back(a);
        }
    } catch (const json::exception& e) {
        throw Error(Errc::MalformedReport, e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::MalformedReport) throw;
        throw Error(Errc::MalformedReport, e.what());
    }
    return report;
}

}  // namespace protoshot
