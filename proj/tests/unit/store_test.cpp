#include <doctest.h>

#include <csignal>
#include <sys/wait.h>
#include <unistd.h>

#include "botverse/errors.hpp"
#include "botverse/rng.hpp"
#include "botverse/store.hpp"
#include "store_script.hpp"
#include "support.hpp"

using namespace botverse;

using testing::Script;
using testing::simple_post;

TEST_SUITE("store") {

TEST_CASE("backends agree on randomized operation sequences") {
  testing::TempDir dir;
  int differing = 0;
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    auto mem = make_memory_store();
    auto sql = make_sql_store((dir / ("s" + std::to_string(seed) + ".db")).string());
    const auto a = Script(seed).run(*mem, 80);
    const auto b = Script(seed).run(*sql, 80);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] != b[i]) {
        ++differing;
        INFO("seed " << seed << " op " << i);
        CHECK(a[i] == b[i]);
        break;
      }
    }
  }
  CHECK(differing == 0);
}

TEST_CASE("integrity violations leave the store untouched") {
  for (const std::string url : {"memory", "sqlite::memory:"}) {
    CAPTURE(url);
    auto s = open_store(url);
    s->put_post(simple_post("p1", 100));
    Post reply = simple_post("p2", 200);
    reply.in_reply_to = "nope";
    CHECK_THROWS_AS(s->put_post(reply), Error);
    CHECK_THROWS_AS(s->put_post(simple_post("p1", 5)), Error);
    CHECK_THROWS_AS(s->append_interaction({InteractionKind::like, AgentId{"a"}, "p1", VirtualTime{50}, {}}), Error);
    s->append_interaction({InteractionKind::like, AgentId{"a"}, "p1", VirtualTime{100}, {}});

    AppliedBatch bad;
    bad.event = EventRow{0, VirtualTime{0}, 0, "k", "{}", std::string(64, '1')};
    bad.posts.push_back(simple_post("p3", 1));
    Post dangling = simple_post("p4", 1);
    dangling.repost_of = "missing";
    bad.posts.push_back(dangling);
    CHECK_THROWS_AS(s->commit(bad), Error);
    CHECK(s->counts() == StoreCounts{0, 1, 1, 0, 0});
    CHECK_FALSE(s->get_post("p3"));
  }
}

TEST_CASE("timeline paging is stable under later inserts") {
  auto s = make_memory_store();
  for (int i = 0; i < 10; ++i) s->put_post(simple_post("p" + std::to_string(i), (i % 4) * 100));
  auto first = s->get_timeline({}, 4, std::nullopt);
  REQUIRE(first.next_cursor);
  s->put_post(simple_post("late", 1000));  // newer than everything: lands before the cursor
  std::vector<std::string> rest;
  std::optional<std::string> c = first.next_cursor;
  while (c) {
    auto page = s->get_timeline({}, 4, c);
    for (const auto& p : page.posts) rest.push_back(p.post_id);
    c = page.next_cursor;
  }
  CHECK(first.posts.size() + rest.size() == 10);
  for (const auto& p : first.posts)
    CHECK(std::find(rest.begin(), rest.end(), p.post_id) == rest.end());
  try {
    s->get_timeline({}, 4, std::string("garbage"));
    FAIL("expected InvalidCursor");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidCursor);
  }
}

TEST_CASE("run metadata is immutable") {
  auto s = make_memory_store();
  s->set_run_metadata({1, "h", "{}"});
  s->set_run_metadata({1, "h", "{}"});
  try {
    s->set_run_metadata({2, "h", "{}"});
    FAIL("expected IntegrityViolation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IntegrityViolation);
  }
}

TEST_CASE("open_store parses urls") {
  CHECK(open_store("memory")->backend_name() == make_memory_store()->backend_name());
  CHECK(open_store("in_memory")->backend_name() == make_memory_store()->backend_name());
  try {
    open_store("postgres://nowhere");
    FAIL("expected ConnectionFailed");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConnectionFailed);
  }
}

TEST_CASE("killed writer loses no acknowledged write") {
  testing::TempDir dir;
  const std::string path = (dir / "kill.db").string();
  int fds[2];
  REQUIRE(::pipe(fds) == 0);
  const pid_t child = ::fork();
  REQUIRE(child >= 0);
  if (child == 0) {
    ::close(fds[0]);
    auto s = make_sql_store(path);
    for (std::int64_t i = 0;; ++i) {
      AppliedBatch b;
      b.event = EventRow{i, VirtualTime{i}, static_cast<std::uint64_t>(i), "k", "{}", std::string(64, 'f')};
      b.posts.push_back(simple_post("p" + std::to_string(i), i));
      s->commit(b);
      const std::int64_t ack = i;
      if (::write(fds[1], &ack, sizeof ack) != sizeof ack) ::_exit(1);
    }
  }
  ::close(fds[1]);
  std::int64_t last = -1, ack = 0;
  while (last < 200 && ::read(fds[0], &ack, sizeof ack) == sizeof ack) last = ack;
  ::kill(child, SIGKILL);
  ::waitpid(child, nullptr, 0);
  while (::read(fds[0], &ack, sizeof ack) == sizeof ack) last = ack;
  ::close(fds[0]);

  auto s = make_sql_store(path);
  const auto c = s->counts();
  CHECK(c.events >= last + 1);
  CHECK(c.posts == c.events);
  for (std::int64_t i = 0; i <= last; ++i) REQUIRE(s->get_post("p" + std::to_string(i)));
  // The reopened store keeps accepting writes at the next index.
  s->append_event(EventRow{c.events, VirtualTime{0}, 0, "k", "{}", std::string(64, 'e')});
}

}  // TEST_SUITE
