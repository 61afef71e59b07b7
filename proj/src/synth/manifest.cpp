#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cryda/synth.hpp"

namespace cryda::synth {

namespace {

constexpr const char* kHeader = "path,patient_id,label,domain,split";

void check_field(const std::string& field, const std::string& name) {
    if (field.empty()) throw IoError("manifest field '" + name + "' is empty");
    if (field.find(',') != std::string::npos || field.find('\n') != std::string::npos)
        throw IoError("manifest field '" + name + "' contains a delimiter: " + field);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::string to_string(Label v) { return v == Label::Healthy ? "healthy" : "injury"; }

std::string to_string(Split v) {
    switch (v) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        default: return "test";
    }
}

Label label_from_string(const std::string& s) {
    if (s == "healthy") return Label::Healthy;
    if (s == "injury") return Label::Injury;
    throw ParamError("unknown label: " + s);
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "valid") return Split::Valid;
    if (s == "test") return Split::Test;
    throw ParamError("unknown split: " + s);
}

void write_manifest(const std::string& path, const CorpusManifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open manifest for writing: " + path);
    out << kHeader << "\n";
    for (const ManifestRow& r : m.rows) {
        check_field(r.path, "path");
        check_field(r.patient_id, "patient_id");
        check_field(r.domain, "domain");
        out << r.path << "," << r.patient_id << "," << to_string(r.label) << "," << r.domain
            << "," << to_string(r.split) << "\n";
    }
    if (!out) throw IoError("failed writing manifest: " + path);
}

CorpusManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + path);

    CorpusManifest m;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != kHeader)
                throw IoError("manifest " + path + " line 1: expected header '" + kHeader +
                              "', got '" + line + "'");
            continue;
        }
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv(line);
        if (fields.size() != 5)
            throw IoError("manifest " + path + " line " + std::to_string(line_no) + ": expected 5 fields, got " +
                          std::to_string(fields.size()));
        ManifestRow r;
        r.path = fields[0];
        r.patient_id = fields[1];
        try {
            r.label = label_from_string(fields[2]);
            r.split = split_from_string(fields[4]);
        } catch (const ParamError& e) {
            throw IoError("manifest " + path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        r.domain = fields[3];
        if (r.path.empty() || r.patient_id.empty() || r.domain.empty())
            throw IoError("manifest " + path + " line " + std::to_string(line_no) + ": empty field");
        m.rows.push_back(r);
    }
    return m;
}

}  // namespace cryda::synth
