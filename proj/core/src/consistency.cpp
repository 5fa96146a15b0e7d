#include "glassbox/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>
#include <tuple>

#include "glassbox/errors.hpp"

namespace glassbox::consistency {

using nlohmann::json;

std::string_view to_string(Question q) { return q == Question::pcr ? "PCR" : "LCR"; }

std::string_view to_string(Answer a) {
  switch (a) {
    case Answer::strongly_agree: return "strongly_agree";
    case Answer::agree: return "agree";
    case Answer::disagree: return "disagree";
    case Answer::strongly_disagree: return "strongly_disagree";
  }
  return "unknown";
}

std::string_view to_string(Population p) { return p == Population::correct ? "correct" : "incorrect"; }

std::string_view to_string(Suggestion s) {
  switch (s) {
    case Suggestion::feature_extraction: return "feature_extraction";
    case Suggestion::decision_making: return "decision_making";
    case Suggestion::data_collection: return "data_collection";
  }
  return "unknown";
}

Question parse_question(std::string_view token, std::size_t row) {
  if (token == "PCR") return Question::pcr;
  if (token == "LCR") return Question::lcr;
  throw ParseError("row " + std::to_string(row) + ": unknown question '" + std::string(token) + "'");
}

Answer parse_answer(std::string_view token, std::size_t row) {
  for (auto a : {Answer::strongly_agree, Answer::agree, Answer::disagree, Answer::strongly_disagree}) {
    if (to_string(a) == token) return a;
  }
  throw ParseError("row " + std::to_string(row) + ": unknown answer '" + std::string(token) + "'");
}

Merged merge_likert(Answer a) {
  return (a == Answer::strongly_agree || a == Answer::agree) ? Merged::agree : Merged::disagree;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  for (char c : line) {
    if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

using ResponseKey = std::tuple<std::uint64_t, Question, std::string>;

}  // namespace

void check_unique(std::span<const WorkerResponse> rows) {
  std::set<ResponseKey> seen;
  for (const auto& r : rows) {
    if (!seen.insert({r.sample_id, r.question, r.worker_id}).second) {
      throw UniquenessError("duplicate response from worker '" + r.worker_id + "' for sample " +
                            std::to_string(r.sample_id) + " question " + std::string(to_string(r.question)));
    }
  }
}

std::vector<WorkerResponse> parse_responses_csv(std::string_view text) {
  std::vector<WorkerResponse> rows;
  std::size_t row = 0;
  std::size_t start = 0;
  bool header_seen = false;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++row;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (start > text.size()) break;
      continue;
    }
    if (!header_seen) {
      if (line != kResponseCsvHeader) {
        throw ParseError("row " + std::to_string(row) + ": expected header '" + std::string(kResponseCsvHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 5) {
      throw ParseError("row " + std::to_string(row) + ": expected 5 fields, found " + std::to_string(fields.size()));
    }
    WorkerResponse r;
    r.task_id = fields[0];
    try {
      std::size_t used = 0;
      r.sample_id = std::stoull(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("row " + std::to_string(row) + ": bad sample id '" + fields[1] + "'");
    }
    r.question = parse_question(fields[2], row);
    r.worker_id = fields[3];
    if (r.worker_id.empty()) throw ParseError("row " + std::to_string(row) + ": empty worker id");
    r.answer = parse_answer(fields[4], row);
    rows.push_back(std::move(r));
  }
  if (!header_seen) throw ParseError("row 1: missing header '" + std::string(kResponseCsvHeader) + "'");
  check_unique(rows);
  return rows;
}

std::string format_response_row(const WorkerResponse& r) {
  std::string line = r.task_id;
  line += ',';
  line += std::to_string(r.sample_id);
  line += ',';
  line += to_string(r.question);
  line += ',';
  line += r.worker_id;
  line += ',';
  line += to_string(r.answer);
  return line;
}

std::string responses_to_csv(std::span<const WorkerResponse> rows) {
  std::string out(kResponseCsvHeader);
  out += '\n';
  for (const auto& r : rows) out += format_response_row(r) + '\n';
  return out;
}

double ratio(std::uint64_t sample_id, Question question, std::span<const WorkerResponse> responses) {
  std::size_t total = 0, agree = 0;
  for (const auto& r : responses) {
    if (r.sample_id != sample_id || r.question != question) continue;
    ++total;
    agree += merge_likert(r.answer) == Merged::agree ? 1 : 0;
  }
  if (total == 0) {
    throw MissingDataError("no " + std::string(to_string(question)) + " responses for sample " +
                           std::to_string(sample_id));
  }
  return static_cast<double>(agree) / static_cast<double>(total);
}

double icr(std::span<const float> softmax) {
  if (softmax.empty()) return 0.0;
  return static_cast<double>(*std::max_element(softmax.begin(), softmax.end()));
}

std::vector<ConsistencyRecord> build_records(std::span<const SampleOutcome> outcomes,
                                             std::span<const WorkerResponse> responses) {
  check_unique(responses);
  std::map<std::uint64_t, std::pair<std::size_t, std::size_t>> agree[2];  // per question: sample -> (agree, total)
  for (const auto& r : responses) {
    auto& slot = agree[r.question == Question::pcr ? 0 : 1][r.sample_id];
    slot.first += merge_likert(r.answer) == Merged::agree ? 1 : 0;
    slot.second += 1;
  }
  std::set<std::uint64_t> known;
  for (const auto& o : outcomes) known.insert(o.sample_id);
  for (const auto& r : responses) {
    if (!known.count(r.sample_id)) {
      throw ValidationError("response for unknown sample " + std::to_string(r.sample_id));
    }
  }
  std::vector<std::uint64_t> missing;
  for (const auto& o : outcomes) {
    if (!agree[0].count(o.sample_id) || !agree[1].count(o.sample_id)) missing.push_back(o.sample_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + std::to_string(missing[i]);
    throw MissingDataError("samples without both PCR and LCR responses: " + list);
  }
  std::vector<ConsistencyRecord> out;
  out.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    const auto& p = agree[0].at(o.sample_id);
    const auto& l = agree[1].at(o.sample_id);
    out.push_back({o.sample_id, static_cast<double>(p.first) / static_cast<double>(p.second),
                   static_cast<double>(l.first) / static_cast<double>(l.second), o.max_softmax,
                   o.predicted_label == o.ground_truth});
  }
  return out;
}

std::size_t JointDistribution::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

std::vector<double> JointDistribution::normalized() const {
  const std::size_t n = total();
  std::vector<double> out(counts.size(), 0.0);
  if (n == 0) return out;
  for (std::size_t i = 0; i < counts.size(); ++i) out[i] = static_cast<double>(counts[i]) / static_cast<double>(n);
  return out;
}

std::size_t bin_of(double ratio, std::size_t bins) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw RangeError("ratio " + std::to_string(ratio) + " outside [0, 1]");
  const auto b = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

JointDistribution joint_distribution(std::span<const ConsistencyRecord> records, std::size_t bins,
                                     Population population) {
  if (bins == 0) throw ValidationError("joint distribution needs at least one bin");
  JointDistribution jd;
  jd.bins = bins;
  jd.population = population;
  jd.counts.assign(bins * bins, 0);
  for (const auto& r : records) {
    if (r.correct != (population == Population::correct)) continue;
    ++jd.counts[bin_of(r.pcr, bins) * bins + bin_of(r.lcr, bins)];
  }
  return jd;
}

double oracle_pcr(std::span<const Mask> rf_masks, std::span<const Mask> attribute_masks, double min_overlap) {
  if (rf_masks.empty()) return 0.0;
  for (const auto& m : attribute_masks) {
    for (const auto& rf : rf_masks) {
      if (m.height != rf.height || m.width != rf.width) throw ShapeError("mask dimensions differ");
    }
  }
  std::size_t relevant = 0;
  for (const auto& rf : rf_masks) {
    const std::size_t area = rf.count();
    if (area == 0) continue;
    for (const auto& am : attribute_masks) {
      if (static_cast<double>(rf.overlap(am)) >= min_overlap * static_cast<double>(area)) {
        ++relevant;
        break;
      }
    }
  }
  return static_cast<double>(relevant) / static_cast<double>(rf_masks.size());
}

double oracle_lcr(const std::set<std::size_t>& inference_attributes, const std::set<std::size_t>& class_attributes) {
  if (inference_attributes.empty()) return 0.0;
  std::size_t hit = 0;
  for (auto t : inference_attributes) hit += class_attributes.count(t);
  return static_cast<double>(hit) / static_cast<double>(inference_attributes.size());
}

std::set<std::size_t> inference_attributes(const features::BinaryFeatureVector& e,
                                           const std::map<std::size_t, std::set<std::size_t>>& assignments) {
  std::set<std::size_t> out;
  for (auto f : e.support()) {
    auto it = assignments.find(f);
    if (it != assignments.end()) out.insert(it->second.begin(), it->second.end());
  }
  return out;
}

std::vector<Diagnosis> diagnose(const ConsistencyRecord& record, const DiagnosisThresholds& thresholds) {
  std::vector<Diagnosis> out;
  if (record.pcr < thresholds.low) {
    out.push_back({Suggestion::feature_extraction,
                   "Low physical consistency: deepen or retrain the feature-extraction layers (before conv_final)."});
  }
  if (record.lcr < thresholds.low) {
    out.push_back({Suggestion::decision_making,
                   "Low logical consistency: deepen or retrain the decision-making layers (after conv_final)."});
  }
  if (!record.correct && record.pcr >= thresholds.high && record.lcr >= thresholds.high) {
    out.push_back({Suggestion::data_collection,
                   "Consistent analysis but wrong label: collect more training data for the confusable classes "
                   "or review the ground truth."});
  }
  return out;
}

std::string record_to_json_line(const ConsistencyRecord& r) {
  return json{{"sample_id", r.sample_id}, {"pcr", r.pcr}, {"lcr", r.lcr}, {"icr", r.icr}, {"correct", r.correct}}
      .dump();
}

std::string records_to_jsonl(std::span<const ConsistencyRecord> records) {
  std::string out;
  for (const auto& r : records) out += record_to_json_line(r) + '\n';
  return out;
}

std::vector<ConsistencyRecord> parse_records_jsonl(std::string_view text) {
  std::vector<ConsistencyRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      ConsistencyRecord r{j.at("sample_id").get<std::uint64_t>(), j.at("pcr").get<double>(), j.at("lcr").get<double>(),
                          j.at("icr").get<double>(), j.at("correct").get<bool>()};
      for (double v : {r.pcr, r.lcr, r.icr}) {
        if (!(v >= 0.0 && v <= 1.0)) throw ParseError("line " + std::to_string(row) + ": ratio outside [0, 1]");
      }
      out.push_back(r);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace glassbox::consistency
