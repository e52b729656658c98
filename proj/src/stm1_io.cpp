#include "gap/stm1_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "gap/common.hpp"

namespace gap::stm1 {

namespace {

using nlohmann::json;

void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_stm1(const std::string& path, const Tensor& data) {
  if (data.ndim() != 3) throw ValidationError("write_stm1: tensor must be 3-D");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("write_stm1: cannot open " + path);
  f.write("STM1", 4);
  write_u32(f, static_cast<std::uint32_t>(data.dim(0)));
  write_u32(f, static_cast<std::uint32_t>(data.dim(1)));
  write_u32(f, static_cast<std::uint32_t>(data.dim(2)));
  std::vector<float> buf(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    buf[i] = static_cast<float>(data[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw ValidationError("write_stm1: write failed for " + path);
}

Tensor read_stm1(const std::string& path, FileAudit* audit) {
  if (audit) audit->record(path);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("read_stm1: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "STM1", 4) != 0)
    throw ValidationError("read_stm1: bad magic in " + path);
  const std::size_t t = read_u32(f);
  const std::size_t w = read_u32(f);
  const std::size_t c = read_u32(f);
  if (!f || t == 0 || w == 0 || c == 0)
    throw ValidationError("read_stm1: bad header in " + path);
  Tensor out({t, w, c});
  std::vector<float> buf(out.size());
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw ValidationError("read_stm1: truncated file " + path);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i];
  return out;
}

void write_sidecar(const std::string& path, const Sidecar& sc) {
  json labels = json::object();
  json mask = json::array();
  const auto& l = sc.labels;
  if (l.has_bvp) labels["bvp"] = l.bvp;
  if (l.has_hr) labels["hr_bpm"] = l.hr_bpm;
  if (l.has_rr) labels["rr_bpm"] = l.rr_bpm;
  if (l.has_spo2) labels["spo2_pct"] = l.spo2_pct;
  mask = {l.has_bvp, l.has_hr, l.has_rr, l.has_spo2};

  json j = {{"subject_id", sc.subject_id}, {"domain_id", sc.domain_id},
            {"fps", sc.fps},               {"start_index", sc.start_index},
            {"labels", labels},            {"mask", mask}};
  std::ofstream f(path);
  if (!f) throw ValidationError("write_sidecar: cannot open " + path);
  f << j.dump(2) << "\n";
}

Sidecar read_sidecar(const std::string& path, FileAudit* audit) {
  if (audit) audit->record(path);
  std::ifstream f(path);
  if (!f) throw ValidationError("read_sidecar: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ValidationError("read_sidecar: bad JSON in " + path + ": " + e.what());
  }
  Sidecar sc;
  sc.subject_id = j.at("subject_id").get<std::string>();
  sc.domain_id = j.at("domain_id").get<std::string>();
  sc.fps = j.at("fps").get<double>();
  sc.start_index = j.at("start_index").get<std::size_t>();
  const auto mask = j.at("mask");
  auto& l = sc.labels;
  l.has_bvp = mask.at(0).get<bool>();
  l.has_hr = mask.at(1).get<bool>();
  l.has_rr = mask.at(2).get<bool>();
  l.has_spo2 = mask.at(3).get<bool>();
  const auto labels = j.at("labels");
  if (l.has_bvp) l.bvp = labels.at("bvp").get<std::vector<double>>();
  if (l.has_hr) l.hr_bpm = labels.at("hr_bpm").get<double>();
  if (l.has_rr) l.rr_bpm = labels.at("rr_bpm").get<double>();
  if (l.has_spo2) l.spo2_pct = labels.at("spo2_pct").get<double>();
  l.validate();
  return sc;
}

void write_manifest(const std::string& path, const Manifest& m) {
  json domains = json::array();
  for (const auto& d : m.domains) {
    domains.push_back({{"domain_id", d.domain_id},
                       {"label_mask", d.label_mask},
                       {"subject_ids", d.subject_ids}});
  }
  json clips = json::array();
  for (const auto& c : m.clips)
    clips.push_back({{"file", c.file},
                     {"subject_id", c.subject_id},
                     {"domain_id", c.domain_id}});
  json j = {{"seed", m.seed},
            {"fps", m.fps},
            {"has_raw_traces", m.has_raw_traces},
            {"domains", domains},
            {"clips", clips}};
  std::ofstream f(path);
  if (!f) throw ValidationError("write_manifest: cannot open " + path);
  f << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& path, FileAudit* audit) {
  if (audit) audit->record(path);
  std::ifstream f(path);
  if (!f) throw ValidationError("read_manifest: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ValidationError("read_manifest: bad JSON in " + path + ": " + e.what());
  }
  Manifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.fps = j.at("fps").get<double>();
  m.has_raw_traces = j.value("has_raw_traces", false);
  for (const auto& d : j.at("domains")) {
    ManifestDomain md;
    md.domain_id = d.at("domain_id").get<std::string>();
    md.label_mask = d.at("label_mask").get<std::vector<bool>>();
    md.subject_ids = d.at("subject_ids").get<std::vector<std::string>>();
    m.domains.push_back(std::move(md));
  }
  for (const auto& c : j.at("clips")) {
    ManifestClip mc;
    mc.file = c.at("file").get<std::string>();
    mc.subject_id = c.at("subject_id").get<std::string>();
    mc.domain_id = c.at("domain_id").get<std::string>();
    m.clips.push_back(std::move(mc));
  }
  return m;
}

}  // namespace gap::stm1
