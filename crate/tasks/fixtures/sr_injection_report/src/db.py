def fetch_user(conn, username):
    query = "SELECT id FROM users WHERE name = '" + username + "'"
    return conn.execute(query).fetchone()
