use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InferenceError, InferredSyscall, Rule};
use crate::graph::Program;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub function: String,
    pub args: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackTrace {
    pub frames: Vec<Frame>,
}

impl StackTrace {
    /// One frame per line, `function(arg0,arg1,...)`, arguments in hex.
    /// `...` placeholders are skipped.
    pub fn parse(text: &str) -> Result<StackTrace, InferenceError> {
        let mut frames = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| InferenceError::Trace {
                line: n + 1,
                msg: msg.to_string(),
            };
            let close = line.rfind(')').ok_or_else(|| err("missing `)`"))?;
            let open = line[..close].rfind('(').ok_or_else(|| err("missing `(`"))?;
            let function = line[..open].trim().to_string();
            if function.is_empty() {
                return Err(err("empty function name"));
            }
            let mut args = Vec::new();
            for tok in line[open + 1..close].split(',').map(str::trim) {
                if tok.is_empty() || tok == "..." || tok == "…" {
                    continue;
                }
                let hex = tok.trim_start_matches("0x").trim_start_matches("0X");
                args.push(u64::from_str_radix(hex, 16).map_err(|_| err(&format!("bad hex argument `{tok}`")))?);
            }
            frames.push(Frame { function, args });
        }
        if frames.is_empty() {
            return Err(InferenceError::Trace {
                line: 0,
                msg: "stack trace has no frames".into(),
            });
        }
        Ok(StackTrace { frames })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<StackTrace, InferenceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| InferenceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        StackTrace::parse(&text)
    }
}

/// Frames whose numeric argument is a syscall number.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchFrames {
    /// A frame is a dispatch frame if its function name ends with one of these.
    pub names: Vec<String>,
    /// Which argument holds the syscall number.
    pub arg_index: usize,
}

impl Default for DispatchFrames {
    fn default() -> Self {
        DispatchFrames {
            names: vec!["doSyscallInvoke".into(), "doSyscallEnter".into()],
            arg_index: 1,
        }
    }
}

/// Syscall number -> name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NrTable(pub BTreeMap<u64, String>);

impl NrTable {
    /// x86-64 numbers for the syscalls the bundled rules and fixtures use.
    pub fn x86_64() -> NrTable {
        const TABLE: &[(u64, &str)] = &[
            (0, "read"),
            (1, "write"),
            (2, "open"),
            (3, "close"),
            (5, "fstat"),
            (7, "poll"),
            (9, "mmap"),
            (10, "mprotect"),
            (11, "munmap"),
            (16, "ioctl"),
            (22, "pipe"),
            (31, "shmctl"),
            (51, "getsockname"),
            (52, "getpeername"),
            (54, "setsockopt"),
            (55, "getsockopt"),
            (61, "wait4"),
            (64, "semget"),
            (66, "semctl"),
            (72, "fcntl"),
            (77, "ftruncate"),
            (105, "setuid"),
            (117, "setresuid"),
            (137, "statfs"),
            (138, "fstatfs"),
            (157, "prctl"),
            (158, "arch_prctl"),
            (165, "mount"),
            (206, "io_setup"),
            (233, "epoll_ctl"),
            (247, "waitid"),
            (257, "openat"),
            (270, "pselect6"),
            (271, "ppoll"),
            (276, "tee"),
            (282, "signalfd"),
            (283, "timerfd_create"),
            (284, "eventfd"),
            (286, "timerfd_settime"),
            (287, "timerfd_gettime"),
            (289, "signalfd4"),
            (290, "eventfd2"),
            (293, "pipe2"),
            (317, "seccomp"),
        ];
        NrTable(TABLE.iter().map(|&(n, s)| (n, s.to_string())).collect())
    }

    pub fn get(&self, nr: u64) -> Option<&str> {
        self.0.get(&nr).map(String::as_str)
    }
}

/// Syscalls whose handler appears as a frame, plus syscalls named by the
/// numeric argument of dispatch frames.
pub fn infer_stack_trace(
    program: &Program,
    trace: &StackTrace,
    nr_table: &NrTable,
    dispatch: &DispatchFrames,
) -> Vec<InferredSyscall> {
    let mut names: Vec<String> = Vec::new();
    for frame in &trace.frames {
        if dispatch.names.iter().any(|d| frame.function.ends_with(d.as_str())) {
            match frame.args.get(dispatch.arg_index).and_then(|&nr| nr_table.get(nr)) {
                Some(sys) => names.push(sys.to_string()),
                None => log::debug!("dispatch frame `{}` has no known syscall number", frame.function),
            }
            continue;
        }
        match program.func_id(&frame.function) {
            Some(f) => {
                if let Some(sys) = &program.function(f).syscall_entry {
                    names.push(sys.clone());
                }
            }
            None => log::debug!("stack frame `{}` is not in the program", frame.function),
        }
    }
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|n| InferredSyscall::new(n, Rule::StackTrace))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn program() -> Program {
        Program::from_json(
            r#"{"functions":[
                    {"name":"sys_tee","signature":"s","syscall_entry":"tee"},
                    {"name":"helper","signature":"h"}],
                "cfgs":[{"function":"sys_tee","entry":0,"blocks":[{"index":0}]},
                        {"function":"helper","entry":0,"blocks":[{"index":0}]}],
                "syscall_map":{"tee":"sys_tee"}}"#,
        )
        .unwrap()
    }

    fn names(v: &[InferredSyscall]) -> Vec<&str> {
        v.iter().map(|s| s.name.as_str()).collect()
    }

    #[test]
    fn dispatch_argument_names_mount() {
        let trace = StackTrace::parse(
            "gvisor.dev/gvisor/pkg/sentry/kernel.(*Task).doSyscallInvoke(0xc000, 0xa5, ...)\nhelper()\n",
        )
        .unwrap();
        let got = infer_stack_trace(&program(), &trace, &NrTable::x86_64(), &DispatchFrames::default());
        assert_eq!(names(&got), vec!["mount"]);
    }

    #[test]
    fn non_handler_frames_infer_nothing() {
        let trace = StackTrace::parse("helper(0x1)\nruntime.goexit()\n").unwrap();
        assert!(infer_stack_trace(&program(), &trace, &NrTable::x86_64(), &DispatchFrames::default()).is_empty());
    }

    #[test]
    fn handler_frame_and_dispatch_lookup_combine() {
        let trace = StackTrace::parse("sys_tee(0x3, 0x4)\ndoSyscallEnter(0x0, 0x4d)\n").unwrap();
        let table = NrTable(BTreeMap::from([(0x4d, "semget".to_string())]));
        let got = infer_stack_trace(&program(), &trace, &table, &DispatchFrames::default());
        assert_eq!(names(&got), vec!["semget", "tee"]);
    }

    #[test]
    fn parse_errors() {
        assert!(StackTrace::parse("").is_err());
        assert!(StackTrace::parse("f(zz)").is_err());
        assert!(StackTrace::parse("f 0x1").is_err());
    }
}
