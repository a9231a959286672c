#pragma once
/// Append-only store of evaluated workflows, searchable by task similarity.
///
/// On-disk layout (stable):
///
///     <dir>/records.jsonl           one JSON record per line
///     <dir>/workflows/<record>.json serialized workflow for that record
///
/// Record fields: record_id, seq, run_id, workflow_id, parent_id,
/// workflow_file (relative), task_prompt, score, embedding[], created_at (ms
/// since epoch). A trailing line without a newline is an interrupted write
/// and is ignored on load.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "evoflow/provider.hpp"
#include "evoflow/workflow.hpp"

namespace evoflow {

/// u.v / (|u||v|). Throws DimMismatch or ZeroVector.
double cosine(std::span<const double> u, std::span<const double> v);

struct ArchiveEntry {
    std::string record_id; ///< assigned by put()
    std::uint64_t seq = 0; ///< assigned by put(); monotonic
    Workflow workflow;
    std::string task_prompt;
    EmbeddingVector embedding;
    double score = 0.0;
    std::int64_t created_at = 0; ///< ms since epoch; put() stamps it when zero
    std::string run_id;
};

struct RetrievalResult {
    std::optional<ArchiveEntry> entry;
    double similarity = 0.0;
    std::size_t candidates_considered = 0; ///< entries with similarity > epsilon
};

/// True when `a` should win over `b` among qualifying candidates: higher
/// score, then later created_at, then later seq.
bool preferred(const ArchiveEntry& a, const ArchiveEntry& b);

class Archive {
  public:
    /// In-memory archive.
    Archive();
    /// Directory-backed archive; loads existing records. Throws StorageError.
    explicit Archive(std::filesystem::path dir);

    Archive(const Archive&) = delete;
    Archive& operator=(const Archive&) = delete;

    /// Appends a record and returns its record_id. Throws ValidationError
    /// (score outside [0,1], invalid workflow), DimMismatch, ZeroVector or
    /// StorageError.
    std::string put(ArchiveEntry entry);

    std::vector<ArchiveEntry> list() const;
    std::size_t size() const;

    /// Highest-scoring entry among those with cosine > epsilon; ties go to the
    /// most recent entry.
    RetrievalResult retrieve(const EmbeddingVector& task_embedding, double epsilon) const;

    /// Workflow ids from `workflow_id` back to the root, following parent_id
    /// while the parent is archived. Throws NotFound.
    std::vector<std::string> lineage(const std::string& workflow_id) const;

    void set_clock(std::function<std::int64_t()> now_ms);

    const std::optional<std::filesystem::path>& directory() const { return dir_; }

  private:
    void load();
    void persist(const ArchiveEntry& entry);

    std::optional<std::filesystem::path> dir_;
    mutable std::shared_mutex mu_;
    std::vector<ArchiveEntry> entries_;
    std::size_t dim_ = 0;
    std::function<std::int64_t()> clock_;
};

Json to_record_json(const ArchiveEntry& entry);

} // namespace evoflow
