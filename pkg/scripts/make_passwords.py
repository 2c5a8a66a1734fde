"""Write a broker password file from user=password arguments.

    python3 scripts/make_passwords.py passwords.txt app01=secret ncap01=other
"""
import argparse

from p1451sec.passwords import write_password_file


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("path")
    parser.add_argument("users", nargs="+", metavar="user=password")
    args = parser.parse_args()
    users = {}
    for item in args.users:
        name, sep, password = item.partition("=")
        if not sep or not name:
            parser.error(f"expected user=password, got {item!r}")
        users[name] = password
    write_password_file(args.path, users)
    print(f"wrote {len(users)} users to {args.path}")


if __name__ == "__main__":
    main()
