#pragma once

#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "gap/stmap.hpp"
#include "gap/tensor.hpp"

namespace gap::stm1 {

// Records every dataset file a consumer opens. Training threads the audit
// through all reads so protocol hygiene (no held-out-domain access) can be
// proven after the fact.
class FileAudit {
 public:
  void record(const std::string& path) {
    std::lock_guard<std::mutex> lock(mu_);
    paths_.push_back(path);
  }
  std::vector<std::string> paths() const {
    std::lock_guard<std::mutex> lock(mu_);
    return paths_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::string> paths_;
};

// "STM1" container: magic, u32 T, u32 W, u32 C, then T*W*C little-endian
// float32 values in (t, w, c) row-major order.
void write_stm1(const std::string& path, const Tensor& data);
Tensor read_stm1(const std::string& path, FileAudit* audit = nullptr);

struct Sidecar {
  std::string subject_id;
  std::string domain_id;
  double fps = 30.0;
  std::size_t start_index = 0;
  stmap::VitalLabels labels;
};

void write_sidecar(const std::string& path, const Sidecar& sc);
Sidecar read_sidecar(const std::string& path, FileAudit* audit = nullptr);

struct ManifestDomain {
  std::string domain_id;
  std::vector<bool> label_mask;  // (bvp, hr, rr, spo2)
  std::vector<std::string> subject_ids;
};

struct ManifestClip {
  std::string file;  // STM1 path relative to the dataset root
  std::string subject_id;
  std::string domain_id;
};

struct Manifest {
  std::uint64_t seed = 0;
  double fps = 30.0;
  bool has_raw_traces = false;
  std::vector<ManifestDomain> domains;
  std::vector<ManifestClip> clips;
};

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path, FileAudit* audit = nullptr);

}  // namespace gap::stm1
