#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sure/cef.hpp"
#include "sure/errors.hpp"
#include "sure/labels.hpp"
#include "sure/study.hpp"

namespace sure {

// JSONL corpus: one Study object per line. Field names are frozen by the
// golden-file tests; docs/FORMATS.md is the human copy of this contract.

namespace detail {

using Json = nlohmann::ordered_json;

inline Report report_from_json(const Json& j) {
    Report r;
    r.findings_text = j.at("findings_text").get<std::string>();
    r.sentences = split_sentences(r.findings_text);
    if (j.contains("embedding")) {
        const auto& je = j.at("embedding");
        r.embedding_ref = EmbeddingRef{je.at("file").get<std::string>(),
                                       je.at("row_begin").get<std::size_t>(),
                                       je.at("row_end").get<std::size_t>()};
    }
    if (j.contains("labels")) {
        std::vector<LabelVector> lvs;
        for (const auto& row : j.at("labels")) {
            if (!row.is_array() || row.size() != kNumFindings)
                throw FormatError("label row must hold " + std::to_string(kNumFindings) +
                                  " integers");
            std::array<int, kNumFindings> raw{};
            for (std::size_t i = 0; i < kNumFindings; ++i) raw[i] = row[i].get<int>();
            lvs.push_back(parse_label_vector(raw));
        }
        r.label_vectors = std::move(lvs);
    }
    return r;
}

inline Json report_to_json(const Report& r) {
    Json j;
    j["findings_text"] = r.findings_text;
    if (r.embedding_ref)
        j["embedding"] = {{"file", r.embedding_ref->file},
                          {"row_begin", r.embedding_ref->row_begin},
                          {"row_end", r.embedding_ref->row_end}};
    if (r.label_vectors) {
        Json rows = Json::array();
        for (const LabelVector& lv : *r.label_vectors) rows.push_back(serialize_label_vector(lv));
        j["labels"] = std::move(rows);
    }
    return j;
}

inline Study study_from_json(const Json& j) {
    Study s;
    s.study_id = j.at("study_id").get<std::string>();
    for (const auto& ji : j.at("images")) {
        ImageRecord img;
        img.image_id = ji.at("image_id").get<std::string>();
        img.view_tag = ViewTag::from_string(ji.at("view_tag").get<std::string>());
        if (ji.contains("view_probs")) {
            const auto& arr = ji.at("view_probs");
            if (!arr.is_array() || arr.size() != 4)
                throw FormatError("view_probs must hold 4 probabilities");
            ViewProbs p{};
            for (std::size_t i = 0; i < 4; ++i) p[i] = arr[i].get<double>();
            img.view_probs = p;
        }
        const auto& je = ji.at("embedding");
        img.embedding_ref.file = je.at("file").get<std::string>();
        img.embedding_ref.row_begin = je.at("row_begin").get<std::size_t>();
        img.embedding_ref.row_end = je.at("row_end").get<std::size_t>();
        s.images.push_back(std::move(img));
    }
    s.report = report_from_json(j.at("report"));
    if (j.contains("prior1")) s.prior1 = report_from_json(j.at("prior1"));
    if (j.contains("prior2")) s.prior2 = report_from_json(j.at("prior2"));
    validate_study(s);
    return s;
}

inline Json study_to_json(const Study& s) {
    Json j;
    j["study_id"] = s.study_id;
    Json images = Json::array();
    for (const ImageRecord& img : s.images) {
        Json ji;
        ji["image_id"] = img.image_id;
        ji["view_tag"] = img.view_tag.to_string();
        if (img.view_probs) ji["view_probs"] = *img.view_probs;
        ji["embedding"] = {{"file", img.embedding_ref.file},
                           {"row_begin", img.embedding_ref.row_begin},
                           {"row_end", img.embedding_ref.row_end}};
        images.push_back(std::move(ji));
    }
    j["images"] = std::move(images);
    j["report"] = report_to_json(s.report);
    if (s.prior1) j["prior1"] = report_to_json(*s.prior1);
    if (s.prior2) j["prior2"] = report_to_json(*s.prior2);
    return j;
}

}  // namespace detail

inline Study parse_study_line(const std::string& line, std::size_t line_no) {
    try {
        return detail::study_from_json(detail::Json::parse(line));
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(line_no, e.what());
    }
}

inline std::string study_to_jsonl(const Study& s) { return detail::study_to_json(s).dump(); }

struct CorpusLoad {
    std::vector<Study> studies;       // input order, bad lines skipped
    std::vector<ParseError> errors;   // one per bad line
};

// Per-line error isolation: a malformed line is recorded and skipped. More
// than 10% bad lines means the file itself is suspect and the load aborts.
inline CorpusLoad load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open corpus file: " + path.string());
    CorpusLoad out;
    std::string line;
    std::size_t line_no = 0, total = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++total;
        try {
            out.studies.push_back(parse_study_line(line, line_no));
        } catch (const ParseError& e) {
            out.errors.push_back(e);
        }
    }
    if (total > 0 && out.errors.size() * 10 > total)
        throw CorpusRejected(out.errors.size(), total);
    return out;
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<Study>& studies) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot create corpus file: " + path.string());
    for (const Study& s : studies) out << study_to_jsonl(s) << '\n';
    if (!out) throw FormatError("short write to " + path.string());
}

}  // namespace sure
