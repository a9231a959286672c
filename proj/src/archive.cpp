#include "evoflow/archive.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include "evoflow/errors.hpp"

namespace evoflow {

namespace fs = std::filesystem;

double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw DimMismatch("cosine: dimension " + std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()));
    double dot = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    if (uu == 0.0 || vv == 0.0)
        throw ZeroVector("cosine: zero vector");
    double c = dot / (std::sqrt(uu) * std::sqrt(vv));
    return std::clamp(c, -1.0, 1.0);
}

bool preferred(const ArchiveEntry& a, const ArchiveEntry& b) {
    if (a.score != b.score)
        return a.score > b.score;
    if (a.created_at != b.created_at)
        return a.created_at > b.created_at;
    return a.seq > b.seq;
}

Json to_record_json(const ArchiveEntry& e) {
    return Json{{"record_id", e.record_id},
                {"seq", e.seq},
                {"run_id", e.run_id},
                {"workflow_id", e.workflow.id},
                {"parent_id", e.workflow.parent_id ? Json(*e.workflow.parent_id) : Json(nullptr)},
                {"workflow_file", "workflows/" + e.record_id + ".json"},
                {"task_prompt", e.task_prompt},
                {"score", e.score},
                {"embedding", e.embedding.values},
                {"created_at", e.created_at}};
}

Archive::Archive() {
    clock_ = [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
    };
}

Archive::Archive(fs::path dir) : Archive() {
    dir_ = std::move(dir);
    std::error_code ec;
    fs::create_directories(*dir_ / "workflows", ec);
    if (ec)
        throw StorageError("archive: cannot create " + dir_->string() + ": " + ec.message());
    load();
}

void Archive::set_clock(std::function<std::int64_t()> now_ms) {
    std::unique_lock lock(mu_);
    clock_ = std::move(now_ms);
}

void Archive::load() {
    fs::path records = *dir_ / "records.jsonl";
    if (!fs::exists(records))
        return;
    std::ifstream in(records, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string all = buf.str();
    std::size_t pos = 0;
    while (pos < all.size()) {
        std::size_t nl = all.find('\n', pos);
        if (nl == std::string::npos)
            break; // interrupted append
        std::string line = all.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty())
            continue;
        try {
            Json j = Json::parse(line);
            ArchiveEntry e;
            e.record_id = j.at("record_id").get<std::string>();
            e.seq = j.at("seq").get<std::uint64_t>();
            e.run_id = j.at("run_id").get<std::string>();
            e.task_prompt = j.at("task_prompt").get<std::string>();
            e.score = j.at("score").get<double>();
            e.embedding.values = j.at("embedding").get<std::vector<double>>();
            e.created_at = j.at("created_at").get<std::int64_t>();
            std::ifstream wf(*dir_ / j.at("workflow_file").get<std::string>(), std::ios::binary);
            if (!wf)
                throw StorageError("missing workflow file for record " + e.record_id);
            std::stringstream wbuf;
            wbuf << wf.rdbuf();
            e.workflow = deserialize(wbuf.str());
            if (dim_ == 0)
                dim_ = e.embedding.dim();
            entries_.push_back(std::move(e));
        } catch (const StorageError&) {
            throw;
        } catch (const std::exception& ex) {
            throw StorageError("archive: corrupt record at byte " + std::to_string(pos) + ": " +
                               ex.what());
        }
    }
}

void Archive::persist(const ArchiveEntry& e) {
    std::string wf_name = "workflows/" + e.record_id + ".json";
    fs::path final_path = *dir_ / wf_name;
    fs::path tmp = final_path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << serialize(e.workflow);
        if (!out)
            throw StorageError("archive: cannot write " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, final_path, ec);
    if (ec)
        throw StorageError("archive: rename failed: " + ec.message());

    std::string line = to_record_json(e).dump() + "\n";
    int fd = ::open((*dir_ / "records.jsonl").c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0)
        throw StorageError("archive: cannot open records file");
    // One write() per record: O_APPEND keeps records whole and ordered.
    ssize_t n = ::write(fd, line.data(), line.size());
    ::fsync(fd);
    ::close(fd);
    if (n != static_cast<ssize_t>(line.size()))
        throw StorageError("archive: short write on records file");
}

std::string Archive::put(ArchiveEntry entry) {
    if (!std::isfinite(entry.score) || entry.score < 0.0 || entry.score > 1.0)
        throw ValidationError("archive: score " + std::to_string(entry.score) + " outside [0,1]");
    auto report = validate(entry.workflow);
    if (!report.ok())
        throw ValidationError("archive: invalid workflow: " + report.summary());
    bool nonzero = false;
    for (double x : entry.embedding.values) {
        if (!std::isfinite(x))
            throw ValidationError("archive: non-finite embedding value");
        nonzero = nonzero || x != 0.0;
    }
    if (!nonzero)
        throw ZeroVector("archive: embedding is zero or empty");

    std::unique_lock lock(mu_);
    if (dim_ != 0 && entry.embedding.dim() != dim_)
        throw DimMismatch("archive: embedding dim " + std::to_string(entry.embedding.dim()) +
                          " != " + std::to_string(dim_));
    entry.seq = entries_.empty() ? 1 : entries_.back().seq + 1;
    char id[32];
    std::snprintf(id, sizeof id, "r%06llu", static_cast<unsigned long long>(entry.seq));
    entry.record_id = id;
    if (entry.created_at == 0)
        entry.created_at = clock_();
    if (dir_)
        persist(entry);
    if (dim_ == 0)
        dim_ = entry.embedding.dim();
    entries_.push_back(entry);
    return entry.record_id;
}

std::vector<ArchiveEntry> Archive::list() const {
    std::shared_lock lock(mu_);
    return entries_;
}

std::size_t Archive::size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
}

RetrievalResult Archive::retrieve(const EmbeddingVector& query, double epsilon) const {
    std::shared_lock lock(mu_);
    RetrievalResult result;
    bool query_nonzero = false;
    for (double x : query.values)
        query_nonzero = query_nonzero || x != 0.0;
    if (!query_nonzero)
        return result;
    const ArchiveEntry* best = nullptr;
    for (const auto& e : entries_) {
        if (e.embedding.dim() != query.dim())
            continue;
        double sim = cosine(e.embedding.values, query.values);
        if (!(sim > epsilon))
            continue;
        ++result.candidates_considered;
        if (!best || preferred(e, *best)) {
            best = &e;
            result.similarity = sim;
        }
    }
    if (best)
        result.entry = *best;
    return result;
}

std::vector<std::string> Archive::lineage(const std::string& workflow_id) const {
    std::shared_lock lock(mu_);
    auto find = [&](const std::string& id) -> const ArchiveEntry* {
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
            if (it->workflow.id == id)
                return &*it;
        return nullptr;
    };
    const ArchiveEntry* cur = find(workflow_id);
    if (!cur)
        throw NotFound("archive: workflow '" + workflow_id + "' not found");
    std::vector<std::string> chain;
    std::set<std::string> seen;
    while (cur && seen.insert(cur->workflow.id).second) {
        chain.push_back(cur->workflow.id);
        cur = cur->workflow.parent_id ? find(*cur->workflow.parent_id) : nullptr;
    }
    return chain;
}

} // namespace evoflow
