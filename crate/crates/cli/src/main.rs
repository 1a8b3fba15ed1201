use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use structfile::bincodec::{read_file, scan_header, write_header, ByteOrder, FileHeader, Mode};
use structfile::blockstore::BlockStore;
use structfile::datamodel::{path_get, DataHandle};
use structfile::error::Error;
use structfile::streamaccess::FileSession;
use structfile::textcodec::print_data;
use structfile::typesys::print_env;

#[derive(Parser)]
#[command(
    name = "structfile",
    version,
    about = "Inspect, convert and validate structured data files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the type of a file.
    Type { file: PathBuf },
    /// Print a file as text.
    Dump {
        file: PathBuf,
        /// Print a complete TEXT-mode file with indented data.
        #[arg(long)]
        pretty: bool,
    },
    /// Rewrite a file in another mode.
    Convert {
        file: PathBuf,
        #[arg(long, value_enum)]
        to: Target,
        #[arg(long, value_enum, default_value_t = Order::Be)]
        order: Order,
        /// Output file; standard output if omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the value at a path such as `a.b[2]`.
    Get {
        file: PathBuf,
        path: String,
        /// Report bytes read to standard error.
        #[arg(long)]
        stats: bool,
    },
    /// Check that a file decodes cleanly.
    Validate {
        file: PathBuf,
        /// Treat the input as a block store and run its verifier.
        #[arg(long)]
        store: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Text,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    Be,
    Le,
}

enum Failure {
    Format(Error),
    Path(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Format(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Format(e.into())
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn header_of(path: &Path) -> Res<FileHeader> {
    Ok(scan_header(&mut BufReader::new(File::open(path)?))?)
}

/// The file's header and root, read lazily when the file is binary.
fn open(path: &Path) -> Res<(FileHeader, DataHandle, Option<FileSession>)> {
    let header = header_of(path)?;
    if header.mode == Mode::Text {
        let (h, d) = read_file(path)?;
        return Ok((h, d, None));
    }
    let sess = FileSession::open(path)?;
    let root = sess.root()?;
    Ok((header, root, Some(sess)))
}

fn is_path_error(e: &Error) -> bool {
    matches!(
        e,
        Error::PathSyntax { .. }
            | Error::NoSuchField(_)
            | Error::FieldNotPresent(_)
            | Error::InactiveUnionField { .. }
            | Error::IndexOutOfRange { .. }
            | Error::NoChildren
            | Error::WrongType(_)
            | Error::UnboundAny
    )
}

fn run(cmd: Command, out: &mut dyn Write) -> Res<()> {
    match cmd {
        Command::Type { file } => {
            let h = header_of(&file)?;
            write!(out, "{}", print_env(&h.env))?;
        }
        Command::Dump { file, pretty } => {
            let (h, root, _sess) = open(&file)?;
            let text = print_data(&root, pretty)?;
            if pretty {
                let th = FileHeader::new(h.env, Mode::Text).with_comments(h.comments);
                write_header(&th, out)?;
            }
            writeln!(out, "{text}")?;
        }
        Command::Convert {
            file,
            to,
            order,
            output,
        } => {
            let (h, root, _sess) = open(&file)?;
            let mode = match (to, order) {
                (Target::Text, _) => Mode::Text,
                (Target::Binary, Order::Be) => Mode::Binary(ByteOrder::Big),
                (Target::Binary, Order::Le) => Mode::Binary(ByteOrder::Little),
            };
            let bytes = structfile::bincodec::file_bytes(&root, mode, &h.comments)?;
            match output {
                Some(p) => std::fs::write(p, bytes)?,
                None => out.write_all(&bytes)?,
            }
        }
        Command::Get { file, path, stats } => {
            let (_, root, sess) = open(&file)?;
            let node = path_get(&root, &path).map_err(|e| {
                if is_path_error(&e) {
                    Failure::Path(e)
                } else {
                    Failure::Format(e)
                }
            })?;
            writeln!(out, "{}", print_data(&node, false)?)?;
            if stats {
                if let Some(s) = sess {
                    let st = s.stats();
                    eprintln!(
                        "read {} of {} bytes in {} calls",
                        st.bytes_read, st.file_len, st.read_calls
                    );
                }
            }
        }
        Command::Validate { file, store } => {
            if store {
                let st = BlockStore::open_read_only(&file)?;
                let report = st.verify()?;
                let layout = st.audit_layout()?;
                writeln!(
                    out,
                    "ok: {} live blocks, {} free blocks, {} unset references, {} unreferenced blocks",
                    report.live_blocks, report.free_blocks, layout.unset_refs, layout.unreachable_blocks
                )?;
            } else {
                read_file(&file)?;
                writeln!(out, "ok")?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(cli.command, &mut out).and_then(|_| Ok(out.flush()?)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Format(e)) => {
            eprintln!("structfile: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Path(e)) => {
            eprintln!("structfile: {e}");
            ExitCode::from(3)
        }
    }
}
