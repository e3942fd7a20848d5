import sqlite3


def fetch_user(conn, username):
    # Builds the query by concatenating the raw username.
    query = "SELECT id, name FROM users WHERE name = '" + username + "'"
    return conn.execute(query).fetchone()


def count_users(conn):
    return conn.execute("SELECT COUNT(*) FROM users").fetchone()[0]
