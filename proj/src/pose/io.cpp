#include "svq/pose/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace svq {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const Sample& s : corpus) {
    const PoseSequence& p = s.pose;
    std::string line;
    line += "{\"id\":" + nlohmann::json(p.id).dump();
    line += ",\"text\":" + nlohmann::json(s.text).dump();
    line += ",\"fps\":" + format_double(p.fps);
    line += ",\"frames\":[";
    for (std::size_t t = 0; t < p.num_frames(); ++t) {
      if (t) line += ',';
      line += '[';
      for (std::size_t v = 0; v < p.joints; ++v) {
        if (v) line += ',';
        line += '[';
        for (std::size_t c = 0; c < p.channels; ++c) {
          if (c) line += ',';
          line += format_double(p.at(t, v, c));
        }
        line += ']';
      }
      line += ']';
    }
    line += "]}\n";
    out << line;
  }
}

void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_corpus(out, corpus);
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

Sample parse_record(const std::string& text, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line, "<record>", e.what());
  }
  if (!j.is_object()) throw ParseError(line, "<record>", "expected a JSON object");
  auto need = [&](const char* field) -> const nlohmann::json& {
    auto it = j.find(field);
    if (it == j.end()) throw ParseError(line, field, "missing");
    return *it;
  };
  Sample s;
  const auto& id = need("id");
  if (!id.is_string()) throw ParseError(line, "id", "expected a string");
  s.pose.id = id.get<std::string>();
  if (j.contains("text")) {
    if (!j["text"].is_string()) throw ParseError(line, "text", "expected a string");
    s.text = j["text"].get<std::string>();
  }
  if (j.contains("fps")) {
    if (!j["fps"].is_number()) throw ParseError(line, "fps", "expected a number");
    s.pose.fps = j["fps"].get<double>();
  }
  const auto& frames = need("frames");
  if (!frames.is_array()) throw ParseError(line, "frames", "expected an array of frames");
  std::size_t V = 0, C = 0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& f = frames[t];
    const std::string where = "frames[" + std::to_string(t) + "]";
    if (!f.is_array() || f.empty()) throw ParseError(line, where, "expected a nonempty array of joints");
    if (t == 0) V = f.size();
    if (f.size() != V) throw ParseError(line, where, "has " + std::to_string(f.size()) + " joints, expected " + std::to_string(V));
    for (std::size_t v = 0; v < V; ++v) {
      const auto& p = f[v];
      const std::string jw = where + "[" + std::to_string(v) + "]";
      if (!p.is_array()) throw ParseError(line, jw, "expected a coordinate array");
      if (t == 0 && v == 0) {
        C = p.size();
        if (C != 2 && C != 3) throw ParseError(line, jw, "expected 2 or 3 coordinates");
      }
      if (p.size() != C) throw ParseError(line, jw, "has " + std::to_string(p.size()) + " coordinates, expected " + std::to_string(C));
      for (const auto& x : p) {
        if (!x.is_number()) throw ParseError(line, jw, "coordinate is not a number");
        s.pose.coords.push_back(x.get<double>());
      }
    }
  }
  s.pose.joints = V;
  s.pose.channels = C == 0 ? 2 : C;
  return s;
}

}  // namespace

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    corpus.push_back(parse_record(text, line));
  }
  return corpus;
}

Corpus read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path);
  return read_corpus(in);
}

}  // namespace svq
