#include <sqlite3.h>

#include <mutex>

#include "botverse/errors.hpp"
#include "botverse/schema.hpp"
#include "botverse/store.hpp"

namespace botverse {

namespace {

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
      throw Error(ErrorCode::Io, std::string("prepare: ") + sqlite3_errmsg(db) + " in " + sql);
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(stmt_, i, v);
    return *this;
  }
  Statement& bind(int i, const std::string& v) {
    sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Statement& bind(int i, const std::optional<std::string>& v) {
    if (v) return bind(i, *v);
    sqlite3_bind_null(stmt_, i);
    return *this;
  }

  // True while a row is available.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw Error(ErrorCode::Io, std::string("sqlite: ") + sqlite3_errmsg(db_));
  }
  void run() {
    while (step()) {
    }
  }

  std::int64_t int64(int col) const { return sqlite3_column_int64(stmt_, col); }
  std::string text(int col) const {
    const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_, col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col))) : std::string{};
  }
  bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

class SqlStore final : public Store {
 public:
  explicit SqlStore(const std::string& path) {
    const int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
    if (sqlite3_open_v2(path.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
      std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      throw Error(ErrorCode::ConnectionFailed, path + ": " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
    try {
      exec("PRAGMA journal_mode=WAL");
      exec("PRAGMA synchronous=NORMAL");
      migrate();
    } catch (const Error& e) {
      sqlite3_close(db_);
      if (e.code() == ErrorCode::MigrationConflict) throw;
      throw Error(ErrorCode::ConnectionFailed, path + ": " + e.detail());
    }
  }

  ~SqlStore() override { sqlite3_close(db_); }

  std::string backend_name() const override { return "sql"; }

  void set_run_metadata(const RunMetadata& meta) override {
    std::lock_guard lock(mutex_);
    if (auto existing = run_metadata_locked()) {
      if (!(*existing == meta)) throw Error(ErrorCode::IntegrityViolation, "run metadata is immutable");
      return;
    }
    Transaction tx(*this);
    for (auto [key, value] : {std::pair<const char*, std::string>{"seed", std::to_string(meta.seed)},
                              {"scenario_hash", meta.scenario_hash},
                              {"scenario", meta.scenario}}) {
      Statement s(db_, "INSERT INTO run_metadata(key, value) VALUES (?, ?)");
      s.bind(1, std::string(key)).bind(2, value).run();
    }
    tx.commit();
  }

  std::optional<RunMetadata> run_metadata() const override {
    std::lock_guard lock(mutex_);
    return run_metadata_locked();
  }

  void put_agent(const AgentRecord& agent) override {
    std::lock_guard lock(mutex_);
    put_agent_locked(agent);
  }

  std::optional<AgentRecord> agent(const AgentId& id) const override {
    std::lock_guard lock(mutex_);
    Statement s(db_, "SELECT agent_id, persona, params FROM agents WHERE agent_id = ?");
    s.bind(1, id.value);
    if (!s.step()) return std::nullopt;
    return read_agent(s);
  }

  std::vector<AgentRecord> agents() const override {
    std::lock_guard lock(mutex_);
    Statement s(db_, "SELECT agent_id, persona, params FROM agents ORDER BY agent_id");
    std::vector<AgentRecord> out;
    while (s.step()) out.push_back(read_agent(s));
    return out;
  }

  void put_post(const Post& post) override {
    std::lock_guard lock(mutex_);
    Transaction tx(*this);
    insert_post_locked(post);
    tx.commit();
  }

  void append_interaction(const Interaction& interaction) override {
    std::lock_guard lock(mutex_);
    Transaction tx(*this);
    insert_interaction_locked(interaction);
    tx.commit();
  }

  void append_event(const EventRow& event) override {
    std::lock_guard lock(mutex_);
    Transaction tx(*this);
    insert_event_locked(event);
    tx.commit();
  }

  void commit(const AppliedBatch& batch) override {
    std::lock_guard lock(mutex_);
    Transaction tx(*this);
    for (const auto& p : batch.posts) insert_post_locked(p);
    for (const auto& i : batch.interactions) insert_interaction_locked(i);
    insert_event_locked(batch.event);
    for (const auto& a : batch.agents) put_agent_locked(a);
    tx.commit();
  }

  std::optional<Post> get_post(const std::string& post_id) const override {
    std::lock_guard lock(mutex_);
    return get_post_locked(post_id);
  }

  TimelinePage get_timeline(const TimelineFilter& filter, std::size_t limit,
                            const std::optional<std::string>& cursor) const override {
    std::optional<store_detail::CursorKey> after;
    if (cursor) after = store_detail::decode_cursor(*cursor);
    std::lock_guard lock(mutex_);

    std::string sql = "SELECT body FROM posts WHERE 1=1";
    if (after) sql += " AND (created_at < ?1 OR (created_at = ?1 AND post_id > ?2))";
    if (filter.author) sql += " AND author = ?3";
    if (filter.narrative) sql += " AND narrative_id = ?4";
    if (filter.since) sql += " AND created_at >= ?5";
    if (filter.until) sql += " AND created_at < ?6";
    sql += " ORDER BY created_at DESC, post_id ASC LIMIT ?7";
    Statement s(db_, sql.c_str());
    if (after) s.bind(1, after->created_at).bind(2, after->post_id);
    if (filter.author) s.bind(3, filter.author->value);
    if (filter.narrative) s.bind(4, *filter.narrative);
    if (filter.since) s.bind(5, filter.since->ms);
    if (filter.until) s.bind(6, filter.until->ms);
    s.bind(7, static_cast<std::int64_t>(limit));

    TimelinePage page;
    while (s.step()) page.posts.push_back(post_from_json(json::parse(s.text(0))));
    if (page.posts.size() == limit && limit > 0) {
      const Post& last = page.posts.back();
      page.next_cursor = encode_cursor(last.created_at, last.post_id);
    }
    return page;
  }

  std::vector<Post> posts() const override {
    std::lock_guard lock(mutex_);
    Statement s(db_, "SELECT body FROM posts ORDER BY rowid");
    std::vector<Post> out;
    while (s.step()) out.push_back(post_from_json(json::parse(s.text(0))));
    return out;
  }

  std::vector<Interaction> interactions(std::optional<VirtualTime> since) const override {
    std::lock_guard lock(mutex_);
    Statement s(db_,
                "SELECT kind, actor, target, at, produced_post FROM interactions "
                "WHERE at >= ? ORDER BY row_id");
    s.bind(1, since ? since->ms : std::int64_t{0});
    std::vector<Interaction> out;
    while (s.step()) {
      Interaction i;
      i.kind = interaction_kind_from_string(s.text(0));
      i.actor = AgentId{s.text(1)};
      i.target = s.text(2);
      i.at = VirtualTime{s.int64(3)};
      if (!s.is_null(4)) i.produced_post = s.text(4);
      out.push_back(std::move(i));
    }
    return out;
  }

  std::vector<EventRow> events(std::int64_t from, std::size_t limit) const override {
    std::lock_guard lock(mutex_);
    Statement s(db_,
                "SELECT event_index, at, seq, kind, line, chain_hash FROM events "
                "WHERE event_index >= ? ORDER BY event_index LIMIT ?");
    s.bind(1, from).bind(2, limit > static_cast<std::size_t>(INT64_MAX) ? INT64_MAX
                                                                        : static_cast<std::int64_t>(limit));
    std::vector<EventRow> out;
    while (s.step())
      out.push_back(EventRow{s.int64(0), VirtualTime{s.int64(1)}, static_cast<std::uint64_t>(s.int64(2)),
                             s.text(3), s.text(4), s.text(5)});
    return out;
  }

  StoreCounts counts() const override {
    std::lock_guard lock(mutex_);
    StoreCounts c;
    c.agents = count_locked("agents");
    c.posts = count_locked("posts");
    c.interactions = count_locked("interactions");
    c.events = count_locked("events");
    c.checkpoints = count_locked("checkpoints");
    return c;
  }

  void save_checkpoint(const Checkpoint& cp) override {
    std::lock_guard lock(mutex_);
    Statement s(db_,
                "INSERT OR REPLACE INTO checkpoints(event_count, as_of, state, state_hash) "
                "VALUES (?, ?, ?, ?)");
    s.bind(1, cp.event_count).bind(2, cp.as_of.ms).bind(3, cp.state).bind(4, cp.state_hash).run();
  }

  std::optional<Checkpoint> latest_checkpoint() const override {
    std::lock_guard lock(mutex_);
    Statement s(db_,
                "SELECT event_count, as_of, state, state_hash FROM checkpoints "
                "ORDER BY event_count DESC LIMIT 1");
    if (!s.step()) return std::nullopt;
    return Checkpoint{s.int64(0), VirtualTime{s.int64(1)}, s.text(2), s.text(3)};
  }

 private:
  class Transaction {
   public:
    explicit Transaction(SqlStore& store) : store_(store) { store_.exec("BEGIN IMMEDIATE"); }
    ~Transaction() {
      if (!done_) sqlite3_exec(store_.db_, "ROLLBACK", nullptr, nullptr, nullptr);
    }
    void commit() {
      store_.exec("COMMIT");
      done_ = true;
    }

   private:
    SqlStore& store_;
    bool done_ = false;
  };

  void exec(const char* sql) const {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      throw Error(ErrorCode::Io, msg);
    }
  }

  void migrate() {
    exec(schema::kSql);
    Statement s(db_, "SELECT value FROM run_metadata WHERE key = 'schema_version'");
    if (s.step()) {
      if (s.text(0) != std::to_string(schema::kVersion))
        throw Error(ErrorCode::MigrationConflict,
                    "database schema version " + s.text(0) + ", expected " + std::to_string(schema::kVersion));
      return;
    }
    Statement ins(db_, "INSERT INTO run_metadata(key, value) VALUES ('schema_version', ?)");
    ins.bind(1, std::to_string(schema::kVersion)).run();
  }

  std::optional<RunMetadata> run_metadata_locked() const {
    Statement s(db_, "SELECT key, value FROM run_metadata");
    RunMetadata m;
    bool any = false;
    while (s.step()) {
      const auto key = s.text(0);
      if (key == "seed") {
        m.seed = std::stoull(s.text(1));
        any = true;
      } else if (key == "scenario_hash") {
        m.scenario_hash = s.text(1);
      } else if (key == "scenario") {
        m.scenario = s.text(1);
      }
    }
    if (!any) return std::nullopt;
    return m;
  }

  static AgentRecord read_agent(const Statement& s) {
    return AgentRecord{AgentId{s.text(0)}, persona_from_json(json::parse(s.text(1))), json::parse(s.text(2))};
  }

  void put_agent_locked(const AgentRecord& agent) {
    if (agent.id.value.empty()) throw Error(ErrorCode::MissingField, "agent_id");
    Statement s(db_, "INSERT OR REPLACE INTO agents(agent_id, persona, params) VALUES (?, ?, ?)");
    s.bind(1, agent.id.value)
        .bind(2, canonical(persona_to_json(agent.persona)))
        .bind(3, canonical(agent.params))
        .run();
  }

  std::optional<Post> get_post_locked(const std::string& id) const {
    Statement s(db_, "SELECT body FROM posts WHERE post_id = ?");
    s.bind(1, id);
    if (!s.step()) return std::nullopt;
    return post_from_json(json::parse(s.text(0)));
  }

  std::int64_t count_locked(const char* table) const {
    Statement s(db_, (std::string("SELECT COUNT(*) FROM ") + table).c_str());
    s.step();
    return s.int64(0);
  }

  bool post_exists_locked(const std::string& id) const {
    Statement s(db_, "SELECT 1 FROM posts WHERE post_id = ?");
    s.bind(1, id);
    return s.step();
  }

  void insert_post_locked(const Post& post) {
    check_post(post);
    if (post_exists_locked(post.post_id))
      throw Error(ErrorCode::IntegrityViolation, "duplicate post_id " + post.post_id);
    if (const auto& parent = post.parent(); parent && !post_exists_locked(*parent))
      throw Error(ErrorCode::IntegrityViolation, post.post_id + ": unknown parent " + *parent);
    Statement s(db_,
                "INSERT INTO posts(post_id, author, created_at, narrative_id, in_reply_to, repost_of, body) "
                "VALUES (?, ?, ?, ?, ?, ?, ?)");
    const std::string author =
        std::holds_alternative<AgentId>(post.author) ? std::get<AgentId>(post.author).value : post.author_name();
    s.bind(1, post.post_id)
        .bind(2, author)
        .bind(3, post.created_at.ms)
        .bind(4, post.narrative_id)
        .bind(5, post.in_reply_to)
        .bind(6, post.repost_of)
        .bind(7, canonical(to_json(post)))
        .run();
  }

  void insert_interaction_locked(const Interaction& i) {
    check_interaction(i);
    auto target = get_post_locked(i.target);
    if (!target) throw Error(ErrorCode::IntegrityViolation, "interaction target unknown: " + i.target);
    if (i.at < target->created_at)
      throw Error(ErrorCode::IntegrityViolation, "interaction precedes target " + i.target);
    if (i.produced_post && !post_exists_locked(*i.produced_post))
      throw Error(ErrorCode::IntegrityViolation, "produced post unknown: " + *i.produced_post);
    Statement s(db_, "INSERT INTO interactions(kind, actor, target, at, produced_post) VALUES (?, ?, ?, ?, ?)");
    s.bind(1, std::string(to_string(i.kind)))
        .bind(2, i.actor.value)
        .bind(3, i.target)
        .bind(4, i.at.ms)
        .bind(5, i.produced_post)
        .run();
  }

  void insert_event_locked(const EventRow& e) {
    Statement next(db_, "SELECT COALESCE(MAX(event_index) + 1, 0) FROM events");
    next.step();
    const auto n = next.int64(0);
    if (e.index != n)
      throw Error(ErrorCode::IntegrityViolation,
                  "event index " + std::to_string(e.index) + " but log holds " + std::to_string(n));
    Statement s(db_, "INSERT INTO events(event_index, at, seq, kind, line, chain_hash) VALUES (?, ?, ?, ?, ?, ?)");
    s.bind(1, e.index)
        .bind(2, e.at.ms)
        .bind(3, static_cast<std::int64_t>(e.seq))
        .bind(4, e.kind)
        .bind(5, e.line)
        .bind(6, e.chain_hash)
        .run();
  }

  sqlite3* db_ = nullptr;
  mutable std::mutex mutex_;
};

}  // namespace

std::unique_ptr<Store> make_sql_store(const std::string& path) { return std::make_unique<SqlStore>(path); }

}  // namespace botverse
