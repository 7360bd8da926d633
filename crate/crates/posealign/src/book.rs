//! Book chapters are attached as doc-tested modules once written.
