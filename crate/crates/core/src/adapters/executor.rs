//! Process execution seam. The engine only sees the [`Executor`] trait, so
//! tests run on a scriptable mock and production on a subprocess runner that
//! can front any container CLI.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::AdapterError;

/// What actually came back from a tool process. `wall_time` is measured by
/// the framework, never trusted from the tool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawOutput {
    pub stdout: String,
    pub stderr: String,
    pub exit_code: i32,
    pub wall_time: f64,
    pub timed_out: bool,
}

pub trait Executor: Send + Sync {
    fn run(
        &self,
        argv: &[String],
        workdir: &Path,
        timeout: Duration,
    ) -> Result<RawOutput, AdapterError>;
}

/// Runs argv as a child process in its own process group so a timeout kills
/// the whole tree, container clients included.
pub struct SubprocessExecutor {
    /// Poll interval for child exit; short enough that measured wall time
    /// stays close to real process lifetime.
    poll: Duration,
}

impl Default for SubprocessExecutor {
    fn default() -> Self {
        SubprocessExecutor {
            poll: Duration::from_millis(10),
        }
    }
}

fn drain(pipe: Option<impl Read + Send + 'static>) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut text = String::new();
        if let Some(mut pipe) = pipe {
            let mut bytes = Vec::new();
            let _ = pipe.read_to_end(&mut bytes);
            text = String::from_utf8_lossy(&bytes).into_owned();
        }
        text
    })
}

impl Executor for SubprocessExecutor {
    fn run(
        &self,
        argv: &[String],
        workdir: &Path,
        timeout: Duration,
    ) -> Result<RawOutput, AdapterError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| AdapterError::ExecutorUnavailable("empty command".to_string()))?;

        let mut command = Command::new(program);
        command
            .args(args)
            .current_dir(workdir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            // New session = new process group; the timeout path kills the
            // group, not just the direct child.
            unsafe {
                command.pre_exec(|| {
                    libc::setsid();
                    Ok(())
                });
            }
        }

        let started = Instant::now();
        let mut child = command
            .spawn()
            .map_err(|e| AdapterError::ExecutorUnavailable(format!("{program}: {e}")))?;
        let stdout = drain(child.stdout.take());
        let stderr = drain(child.stderr.take());

        let mut timed_out = false;
        let exit_code = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status.code().unwrap_or(-1),
                Ok(None) => {
                    if started.elapsed() >= timeout {
                        timed_out = true;
                        kill_group(&mut child);
                        let status = child.wait().ok();
                        break status.and_then(|s| s.code()).unwrap_or(-1);
                    }
                    std::thread::sleep(self.poll);
                }
                Err(e) => {
                    kill_group(&mut child);
                    return Err(AdapterError::ExecutorUnavailable(format!(
                        "waiting on {program}: {e}"
                    )));
                }
            }
        };
        let wall_time = started.elapsed().as_secs_f64();

        Ok(RawOutput {
            stdout: stdout.join().unwrap_or_default(),
            stderr: stderr.join().unwrap_or_default(),
            exit_code,
            wall_time,
            timed_out,
        })
    }
}

fn kill_group(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        // The child is its own session leader, so its pid names the group.
        unsafe {
            libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

/// One recorded invocation on the mock.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub argv: Vec<String>,
    pub workdir: PathBuf,
    pub timeout: Duration,
}

type MockScript = Result<RawOutput, String>;

/// Scriptable executor for tests: responses are consumed in push order and
/// every call is recorded. An exhausted script answers with a clean exit.
#[derive(Default)]
pub struct MockExecutor {
    script: Mutex<Vec<MockScript>>,
    calls: Mutex<Vec<MockCall>>,
    count: AtomicUsize,
}

impl MockExecutor {
    pub fn new() -> Self {
        MockExecutor::default()
    }

    pub fn respond(self, output: RawOutput) -> Self {
        self.script.lock().unwrap().push(Ok(output));
        self
    }

    pub fn fail(self, message: &str) -> Self {
        self.script.lock().unwrap().push(Err(message.to_string()));
        self
    }

    pub fn call_count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().unwrap().clone()
    }
}

impl Executor for MockExecutor {
    fn run(
        &self,
        argv: &[String],
        workdir: &Path,
        timeout: Duration,
    ) -> Result<RawOutput, AdapterError> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.calls.lock().unwrap().push(MockCall {
            argv: argv.to_vec(),
            workdir: workdir.to_path_buf(),
            timeout,
        });
        let mut script = self.script.lock().unwrap();
        if script.is_empty() {
            return Ok(RawOutput::default());
        }
        script
            .remove(0)
            .map_err(AdapterError::ExecutorUnavailable)
    }
}
